//! Retention sweep and ablation grid over the toy task.
//!
//! Both are structural reproductions: they run every configuration end to
//! end and report energy and toy loss, not recognition accuracy.

use std::fmt::Write as _;

use crate::error::{param_err, Result};
use crate::fab::FabVariant;
use crate::freq::retained_energy_profile;
use crate::tensor::Tensor;
use crate::toy::{train_toy, ToyConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    /// Share of the coefficient energy of all images kept at retention `m`.
    pub energy_fraction: f64,
    /// Final toy-task loss when the extractor uses retention `m`.
    pub toy_loss: f64,
}

/// One row per `m = 1..=n`, where `n` is the toy extractor's patch size.
pub fn retention_sweep(images: &[Tensor], toy: &ToyConfig) -> Result<Vec<SweepRow>> {
    if images.is_empty() {
        return param_err("retention sweep needs at least one image");
    }
    let n = toy.extractor.patch_size;
    let mut kept = vec![0.0; n];
    for img in images {
        for (k, e) in kept.iter_mut().zip(retained_energy_profile(img, n)?) {
            *k += e;
        }
    }
    let total = kept[n - 1];
    (1..=n)
        .map(|m| {
            let mut cfg = toy.clone();
            cfg.extractor.retention = m;
            let run = train_toy(&cfg)?;
            Ok(SweepRow {
                m,
                energy_fraction: if total > 0.0 { kept[m - 1] / total } else { 1.0 },
                toy_loss: *run.losses.last().expect("at least one loss"),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("m,energy_fraction,toy_loss\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.m, r.energy_fraction, r.toy_loss).expect("string write");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationSetting {
    pub patch_size: usize,
    pub channel_attention: bool,
    pub positional_encoding: bool,
    pub use_fab: bool,
    pub variant: FabVariant,
}

/// Component rows (extractor alone, + attention, + encoding, both, + FAB)
/// followed by the remaining FAB variants with every component on, for
/// patch sizes 8 and 16.
pub fn ablation_grid() -> Vec<AblationSetting> {
    let mut grid = Vec::new();
    for patch_size in [8, 16] {
        let setting = |ca, pe, fab, variant| AblationSetting {
            patch_size,
            channel_attention: ca,
            positional_encoding: pe,
            use_fab: fab,
            variant,
        };
        let full = FabVariant::default();
        for (ca, pe) in [(false, false), (true, false), (false, true), (true, true)] {
            grid.push(setting(ca, pe, false, full));
        }
        for variant in FabVariant::ALL {
            grid.push(setting(true, true, true, variant));
        }
    }
    grid
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn run_ablation(grid: &[AblationSetting], base: &ToyConfig) -> Result<Vec<AblationRow>> {
    grid.iter()
        .map(|s| {
            let mut cfg = base.clone();
            cfg.extractor.patch_size = s.patch_size;
            cfg.extractor.retention = cfg.extractor.retention.min(s.patch_size);
            cfg.channel_attention = s.channel_attention;
            cfg.positional_encoding = s.positional_encoding;
            cfg.use_fab = s.use_fab;
            cfg.variant = s.variant;
            let run = train_toy(&cfg)?;
            Ok(AblationRow {
                setting: *s,
                initial_loss: run.losses[0],
                final_loss: *run.losses.last().expect("at least one loss"),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("patch_size,channel_attention,positional_encoding,fab,fab_variant,initial_loss,final_loss\n");
    for r in rows {
        let s = &r.setting;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.patch_size,
            s.channel_attention as u8,
            s.positional_encoding as u8,
            s.use_fab as u8,
            if s.use_fab { s.variant.to_string() } else { "none".into() },
            r.initial_loss,
            r.final_loss
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ToyConfig {
        let mut cfg = ToyConfig { steps: 1, batch: 2, image_size: 32, ..Default::default() };
        cfg.extractor.channels = 8;
        cfg.extractor.num_blocks = 1;
        cfg
    }

    #[test]
    fn grid_covers_components_and_variants() {
        let grid = ablation_grid();
        assert_eq!(grid.len(), 16);
        assert_eq!(grid.iter().filter(|s| s.patch_size == 16).count(), 8);
        for v in FabVariant::ALL {
            assert!(grid.iter().any(|s| s.use_fab && s.variant == v));
        }
    }

    #[test]
    fn sweep_rows_are_monotone_and_complete() {
        let img = Tensor::from_fn(&[1, 20, 20], |i| ((i * 37) % 11) as f64 / 10.0);
        let mut cfg = tiny();
        cfg.extractor.patch_size = 4;
        cfg.extractor.retention = 3;
        let rows = retention_sweep(&[img], &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|w| w[0].energy_fraction <= w[1].energy_fraction));
        assert_eq!(rows[3].energy_fraction, 1.0);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("m,energy_fraction,toy_loss\n1,"));
    }

    #[test]
    fn empty_sweep_is_rejected() {
        assert!(retention_sweep(&[], &tiny()).is_err());
    }
}
