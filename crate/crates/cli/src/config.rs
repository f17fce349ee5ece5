//! Run configuration: a JSON file of defaults, overridden by flags.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use dream_core::addrmap::DramGeometry;
use dream_core::dramsim::{SimConfig, TimingParams};
use dream_core::migration::CostModel;
use dream_core::monitor::WindowConfig;
use dream_core::predictor::PredictorConfig;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub geometry: DramGeometry,
    pub timing: TimingParams,
    pub window: WindowConfig,
    pub predictor: PredictorConfig,
    pub cost_model: CostModel,
    pub rob_window: u32,
    pub write_high_watermark: usize,
    pub write_low_watermark: usize,
    pub drain_per_slot: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            geometry: sim.geom,
            timing: sim.timing,
            window: WindowConfig::default(),
            predictor: PredictorConfig::default(),
            cost_model: sim.cost_model,
            rob_window: sim.rob_window,
            write_high_watermark: sim.write_high_watermark,
            write_low_watermark: sim.write_low_watermark,
            drain_per_slot: 1,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            geom: self.geometry,
            timing: self.timing,
            cost_model: self.cost_model,
            rob_window: self.rob_window,
            write_high_watermark: self.write_high_watermark,
            write_low_watermark: self.write_low_watermark,
        }
    }
}
