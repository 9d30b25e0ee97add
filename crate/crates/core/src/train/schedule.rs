use std::f64::consts::PI;

use super::TrainConfig;

/// Linear warmup to `lr_max`, then cosine decay to `final_lr_ratio · lr_max`
/// at `total_steps`. Steps past the end stay at the floor.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    let (warmup, total) = (config.warmup_steps, config.total_steps);
    let lr_min = config.lr_min();
    if step < warmup {
        return config.lr_max * step as f64 / warmup as f64;
    }
    if step >= total {
        return lr_min;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    lr_min + 0.5 * (config.lr_max - lr_min) * (1.0 + (PI * progress).cos())
}
