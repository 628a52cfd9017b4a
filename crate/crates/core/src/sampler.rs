//! Bursty sampling: monitor `window_enable` instructions, skip
//! `window_disable`, repeat. Windows are anchored at instruction index 0 of
//! each thread.

use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW_ENABLE: u64 = 1_000_000;
pub const DEFAULT_WINDOW_DISABLE: u64 = 99_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub window_enable: u64,
    pub window_disable: u64,
    pub enabled: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            window_enable: DEFAULT_WINDOW_ENABLE,
            window_disable: DEFAULT_WINDOW_DISABLE,
            enabled: true,
        }
    }
}

impl SamplingConfig {
    /// Every instruction monitored.
    pub fn full() -> Self {
        SamplingConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn windows(window_enable: u64, window_disable: u64) -> Self {
        SamplingConfig {
            window_enable,
            window_disable,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.enabled && self.window_enable == 0 {
            return Err("window_enable must be at least 1 when sampling".to_string());
        }
        Ok(())
    }

    /// Fraction of instructions monitored in the long run.
    pub fn rate(&self) -> f64 {
        if !self.enabled {
            return 1.0;
        }
        self.window_enable as f64 / (self.window_enable as f64 + self.window_disable as f64)
    }
}

pub fn is_monitored(ins_index: u64, config: &SamplingConfig) -> bool {
    if !config.enabled {
        return true;
    }
    let period = config.window_enable.saturating_add(config.window_disable);
    if period == 0 {
        return false;
    }
    ins_index % period < config.window_enable
}
