use super::config::TrainConfig;

/// Piecewise-constant learning rate: `lr0` times `lr_factor` per drop passed.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    cfg.lr_drops
        .iter()
        .filter(|&&d| iter >= d)
        .fold(cfg.lr0, |lr, _| lr * cfg.lr_factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_boundaries() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-3);
        assert_eq!(lr_at(2999, &cfg), 1e-3);
        assert_eq!(lr_at(3000, &cfg), 1e-4);
        assert_eq!(lr_at(4499, &cfg), 1e-4);
        assert_eq!(lr_at(4500, &cfg), 1e-5);
        assert_eq!(lr_at(5999, &cfg), 1e-5);
    }
}
