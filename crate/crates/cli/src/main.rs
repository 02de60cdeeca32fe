use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mfh::bench::{bench_dct, bench_image, format_bench};
use mfh::extractor::ExtractorConfig;
use mfh::fab::{FabVariant, FabVectors};
use mfh::freq::{preprocess, FreqMode};
use mfh::grad::{run_gradcheck, BlockId, GradCheckConfig};
use mfh::nn::ParamSet;
use mfh::pgm::{read_pgm, write_pgm};
use mfh::sweep::{ablation_csv, ablation_grid, retention_sweep, run_ablation, sweep_csv};
use mfh::tensor::{write_mfht, DType, Tensor};
use mfh::toy::{loss_trace_csv, train_toy, ToyConfig};
use mfh::weights::{load_model, read_weights, write_weights};

#[derive(Parser)]
#[command(name = "mfh", version, about = "Frequency-domain feature pipeline for expression images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Unset values fall back to each command's
/// own defaults.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// DCT block size n
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    /// High-frequency retention m (1 ≤ m ≤ n)
    #[arg(long, global = true)]
    retain: Option<usize>,
    /// Feature channels C (multiple of 4)
    #[arg(long, global = true)]
    channels: Option<usize>,
    /// Number of MLP blocks
    #[arg(long, global = true)]
    mlp_layers: Option<usize>,
    #[arg(long, global = true)]
    dropout: Option<f64>,
    #[arg(long, global = true)]
    pe_scale: Option<f64>,
    /// Channel-attention reduction ratio
    #[arg(long, global = true)]
    reduction: Option<usize>,
    /// MLP hidden width multiplier
    #[arg(long, global = true)]
    expansion: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Map pixel values v → 1 − v after loading
    #[arg(long, global = true)]
    invert: bool,
    /// coeff | spatial
    #[arg(long, global = true)]
    freq_mode: Option<FreqMode>,
    #[arg(long, global = true)]
    no_channel_att: bool,
    #[arg(long, global = true)]
    no_pos_enc: bool,
    #[arg(long, global = true)]
    no_fab: bool,
}

impl Common {
    fn extractor(&self, mut cfg: ExtractorConfig) -> Result<ExtractorConfig> {
        cfg.patch_size = self.patch_size.unwrap_or(cfg.patch_size);
        cfg.retention = self.retain.unwrap_or(cfg.retention);
        cfg.channels = self.channels.unwrap_or(cfg.channels);
        cfg.num_blocks = self.mlp_layers.unwrap_or(cfg.num_blocks);
        cfg.dropout = self.dropout.unwrap_or(cfg.dropout);
        cfg.pe_scale = self.pe_scale.unwrap_or(cfg.pe_scale);
        cfg.reduction = self.reduction.unwrap_or(cfg.reduction);
        cfg.expansion = self.expansion.unwrap_or(cfg.expansion);
        cfg.freq_mode = self.freq_mode.unwrap_or(cfg.freq_mode);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Block size and retention only, for commands that never build a network.
    fn transform(&self) -> Result<(usize, usize)> {
        let n = self.patch_size.unwrap_or(8);
        let m = self.retain.unwrap_or(5);
        if n < 2 {
            bail!("patch size {n} must be at least 2");
        }
        if m == 0 || m > n {
            bail!("retention m={m} outside [1, {n}]");
        }
        Ok((n, m))
    }

    fn toy(&self, base: ToyConfig) -> Result<ToyConfig> {
        let mut cfg = base;
        cfg.extractor = self.extractor(cfg.extractor)?;
        cfg.init_seed = self.seed.unwrap_or(cfg.init_seed);
        cfg.channel_attention = !self.no_channel_att;
        cfg.positional_encoding = !self.no_pos_enc;
        cfg.use_fab = !self.no_fab;
        Ok(cfg)
    }
}

#[derive(Args, Clone, Debug)]
struct ToyArgs {
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Samples in the fixed training batch
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    dataset_seed: u64,
    /// concat+learnable | concat+unit | add+learnable | add+unit
    #[arg(long, default_value = "concat+learnable")]
    fab_variant: FabVariant,
}

impl ToyArgs {
    fn base(&self) -> Result<ToyConfig> {
        if self.batch == 0 || self.image_size == 0 {
            bail!("batch and image size must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            bail!("learning rate must be finite and non-negative");
        }
        Ok(ToyConfig {
            steps: self.steps,
            lr: self.lr,
            batch: self.batch,
            image_size: self.image_size,
            dataset_seed: self.dataset_seed,
            variant: self.fab_variant,
            ..ToyConfig::default()
        })
    }
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    DType::from_name(s).ok_or_else(|| format!("unknown dtype {s:?}, expected f32 or f64"))
}

#[derive(Subcommand)]
enum Command {
    /// Pad, block-DCT and mask an image; dump the result as MFHT.
    Preprocess {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "f64", value_parser = parse_dtype)]
        dtype: DType,
        #[command(flatten)]
        common: Common,
    },
    /// Render the masked image back in the pixel domain as an 8-bit PGM.
    Viz {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Retained energy and toy-task loss for every retention m = 1..n.
    Sweep {
        /// Directory of .pgm images
        input_dir: PathBuf,
        output: PathBuf,
        /// Also run the component / patch-size / FAB-variant grid into this CSV
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[command(flatten)]
        toy: ToyArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Run the two-stream encoder on an image and dump one feature map.
    Forward {
        input: PathBuf,
        weights: PathBuf,
        output: PathBuf,
        /// k | t | fused
        #[arg(long, default_value = "fused")]
        dump: String,
        /// Treat FAB channel vectors as fixed ones
        #[arg(long)]
        unit_vectors: bool,
        #[arg(long, default_value = "f64", value_parser = parse_dtype)]
        dtype: DType,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients; prints a JSON report.
    Gradcheck {
        /// Comma-separated block names (default: every block)
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<BlockId>,
        /// Also check the whole encoder + head + loss at once
        #[arg(long)]
        pipeline: bool,
        /// Number of seeds, starting at --seed
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 16)]
        image_size: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 256)]
        max_probes: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on the synthetic two-class task; emits a step,loss CSV.
    TrainToy {
        output: Option<PathBuf>,
        /// Save the trained encoder (and head) as MFHW
        #[arg(long)]
        save_weights: Option<PathBuf>,
        #[command(flatten)]
        toy: ToyArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Time the direct DCT against the separable one on a noise image.
    Bench {
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn load_image(path: &Path, invert: bool) -> Result<Tensor> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_pgm(std::io::BufReader::new(file), invert).with_context(|| format!("reading {}", path.display()))
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn mfht_bytes(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_mfht(&mut buf, t, dtype)?;
    Ok(buf)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .pgm files in {}", dir.display());
    }
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { input, output, dtype, common } => {
            let (n, m) = common.transform()?;
            let image = load_image(&input, common.invert)?;
            let freq = preprocess(&image, n, m, common.freq_mode.unwrap_or_default())?;
            write_out(&output, &mfht_bytes(&freq.data, dtype)?)
        }
        Command::Viz { input, output, common } => {
            let (n, m) = common.transform()?;
            let image = load_image(&input, common.invert)?;
            let freq = preprocess(&image, n, m, FreqMode::Spatial)?;
            let mut buf = Vec::new();
            write_pgm(&mut buf, &freq.data)?;
            write_out(&output, &buf)
        }
        Command::Sweep { input_dir, output, ablation, toy, common } => {
            let cfg = common.toy(toy.base()?)?;
            let images = pgm_files(&input_dir)?
                .iter()
                .map(|p| load_image(p, common.invert))
                .collect::<Result<Vec<_>>>()?;
            let rows = retention_sweep(&images, &cfg)?;
            let ablation_out = match &ablation {
                Some(_) => Some(ablation_csv(&run_ablation(&ablation_grid(), &cfg)?)),
                None => None,
            };
            write_out(&output, sweep_csv(&rows).as_bytes())?;
            if let (Some(path), Some(csv)) = (ablation, ablation_out) {
                write_out(&path, csv.as_bytes())?;
            }
            Ok(())
        }
        Command::Forward { input, weights, output, dump, unit_vectors, dtype, common } => {
            if !matches!(dump.as_str(), "k" | "t" | "fused") {
                bail!("--dump must be k, t or fused, got {dump:?}");
            }
            let file = fs::File::open(&weights).with_context(|| format!("opening {}", weights.display()))?;
            let map = read_weights(std::io::BufReader::new(file))?;
            let vectors = if unit_vectors { FabVectors::Unit } else { FabVectors::Learnable };
            let base = ExtractorConfig {
                retention: common.retain.unwrap_or(5),
                pe_scale: common.pe_scale.unwrap_or(1.0),
                freq_mode: common.freq_mode.unwrap_or_default(),
                ..ExtractorConfig::default()
            };
            let mut model = load_model(&map, &base, vectors)?;
            let cfg = &model.extractor.config;
            for (flag, given, stored) in [
                ("--channels", common.channels, cfg.channels),
                ("--patch-size", common.patch_size, cfg.patch_size),
                ("--mlp-layers", common.mlp_layers, cfg.num_blocks),
            ] {
                if given.is_some_and(|g| g != stored) {
                    bail!("{flag} disagrees with the weights file ({stored})");
                }
            }
            if common.retain.is_some_and(|m| m > cfg.patch_size) {
                bail!("retention m={} exceeds patch size {}", common.retain.unwrap_or(0), cfg.patch_size);
            }
            model.flags.channel_attention = !common.no_channel_att;
            model.flags.positional_encoding = !common.no_pos_enc;
            model.use_fab = !common.no_fab;
            let image = load_image(&input, common.invert)?;
            let out = model.forward(&image)?;
            let t = match dump.as_str() {
                "k" => &out.k,
                "t" => &out.t,
                _ => &out.fused,
            };
            write_out(&output, &mfht_bytes(t, dtype)?)
        }
        Command::Gradcheck { blocks, pipeline, seeds, image_size, eps, max_probes, output, common } => {
            let first = common.seed.unwrap_or(0);
            let cfg = GradCheckConfig {
                channels: common.channels.unwrap_or(8),
                patch_size: common.patch_size.unwrap_or(4),
                image_size,
                mlp_blocks: common.mlp_layers.unwrap_or(2),
                seeds: (first..first + seeds).collect(),
                eps,
                max_probes,
                ..GradCheckConfig::default()
            };
            if cfg.image_size == 0 || !cfg.image_size.is_multiple_of(16) {
                bail!("--image-size must be a positive multiple of 16");
            }
            let mut ids = if blocks.is_empty() { BlockId::BLOCKS.to_vec() } else { blocks };
            if pipeline && !ids.contains(&BlockId::Pipeline) {
                ids.push(BlockId::Pipeline);
            }
            let report = run_gradcheck(&ids, &cfg)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            match output {
                Some(path) => write_out(&path, json.as_bytes())?,
                None => print!("{json}"),
            }
            if !report.pass {
                bail!("gradient check failed (threshold {:e})", cfg.threshold);
            }
            Ok(())
        }
        Command::TrainToy { output, save_weights, toy, common } => {
            let cfg = common.toy(toy.base()?)?;
            let run = train_toy(&cfg)?;
            let csv = loss_trace_csv(&run.losses);
            match output {
                Some(path) => write_out(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            if let Some(path) = save_weights {
                let mut buf = Vec::new();
                write_weights(&mut buf, &run.model.tensors(), DType::F64)?;
                write_out(&path, &buf)?;
            }
            Ok(())
        }
        Command::Bench { size, repeats, json, common } => {
            let (n, _) = common.transform()?;
            if size == 0 {
                bail!("--size must be positive");
            }
            let image = bench_image(common.seed.unwrap_or(0), size, size);
            let report = bench_dct(&image, n, repeats)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", format_bench(&report));
            }
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
