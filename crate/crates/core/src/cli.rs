//! Command-line front end: `encode`, `decode`, `info` and `eval`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bitstream::{self, SectionKind};
use crate::error::{Error, Result};
use crate::eval::{self, Map, RdCurve, RdPoint, ReportMaps};
use crate::lightfield::{load_lightfield, save_lightfield, ViewNaming};
use crate::model::{self, ModelConfig};
use crate::train::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "sanr", version, about = "Light field codec built on a scene-aware neural representation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a representation of a light field and write it as a `.sanr` stream.
    Encode(EncodeArgs),
    /// Reconstruct every view of a `.sanr` stream as PNG files.
    Decode(DecodeArgs),
    /// Print the header and per-section byte accounting of a stream.
    Info(InfoArgs),
    /// Compare a reconstruction with its reference and emit RD, error and per-view maps.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    R1,
    R2,
    R3,
    R4,
    /// 6 QAT epochs and 1 SGA epoch.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Dataset {
    #[default]
    Epfl,
    Hci,
}

/// Spatial channels of the rate points r1..r4.
pub const PRESET_CS: [usize; 4] = [48, 93, 123, 163];
pub const EPFL_LAMBDAS: [f64; 4] = [0.01, 0.005, 0.001, 0.0005];
pub const HCI_LAMBDAS: [f64; 4] = [0.005, 0.001, 0.0005, 0.0001];

impl Preset {
    fn rate_index(self) -> Option<usize> {
        match self {
            Preset::R1 => Some(0),
            Preset::R2 => Some(1),
            Preset::R3 => Some(2),
            Preset::R4 => Some(3),
            Preset::Fast => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    /// Directory of view PNGs.
    #[arg(long)]
    pub input: PathBuf,
    /// Output `.sanr` file; `report.csv` and `report.json` go next to it.
    #[arg(long)]
    pub output: PathBuf,
    /// Named configuration; may be repeated, e.g. `--preset r2 --preset fast`.
    #[arg(long, value_enum)]
    pub preset: Vec<Preset>,
    /// Selects the lambda list used by r1..r4.
    #[arg(long, value_enum, default_value_t = Dataset::Epfl)]
    pub dataset: Dataset,
    /// Spatial channels C_S [default: 48, or the preset's].
    #[arg(long)]
    pub cs: Option<usize>,
    /// Lagrange multiplier [default: the preset's for the dataset, r1 if none].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Kernel bases r.
    #[arg(long, default_value_t = 6)]
    pub rank: usize,
    /// Latent channels C_l.
    #[arg(long, default_value_t = 10)]
    pub cl: usize,
    /// QAT epochs [default: 30, 6 with the fast preset].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGA epochs [default: 6, 1 with the fast preset].
    #[arg(long)]
    pub sga_epochs: Option<usize>,
    /// Draws of each view per epoch.
    #[arg(long, default_value_t = 500)]
    pub samples_per_sai: usize,
    /// Seed of every random choice [default: 0; required with --strict].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reject an unset seed.
    #[arg(long)]
    pub strict: bool,
    /// View file pattern.
    #[arg(long, default_value = "view_{u}_{v}.png")]
    pub naming: String,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// `.sanr` stream.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for the decoded views and `meta.json`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "view_{u}_{v}.png")]
    pub naming: String,
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    /// `.sanr` stream.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of the original views.
    #[arg(long)]
    pub reference: PathBuf,
    /// Directory of the reconstructed views.
    #[arg(long)]
    pub recon: PathBuf,
    /// Stream the reconstruction was decoded from, for its rate.
    #[arg(long)]
    pub stream: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Curve label in `rd.csv`.
    #[arg(long, default_value = "sanr")]
    pub label: String,
    #[arg(long, default_value = "view_{u}_{v}.png")]
    pub naming: String,
}

/// Model and training configuration an `encode` invocation resolves to.
pub fn resolve_encode(args: &EncodeArgs, u: usize, v: usize, h: usize, w: usize) -> Result<(ModelConfig, TrainConfig)> {
    if args.strict && args.seed.is_none() {
        return Err(Error::InvalidArgument("--strict requires --seed".into()));
    }
    let rate = args.preset.iter().rev().find_map(|p| p.rate_index()).unwrap_or(0);
    let fast = args.preset.contains(&Preset::Fast);
    let lambdas = match args.dataset {
        Dataset::Epfl => EPFL_LAMBDAS,
        Dataset::Hci => HCI_LAMBDAS,
    };
    let mcfg = ModelConfig {
        rank: args.rank,
        c_l: args.cl,
        ..ModelConfig::new(args.cs.unwrap_or(PRESET_CS[rate]), u, v, h, w)
    };
    let base = if fast { TrainConfig::fast(0.0, 0) } else { TrainConfig::default() };
    let tcfg = TrainConfig {
        lambda: args.lambda.unwrap_or(lambdas[rate]),
        lr_init: args.lr,
        max_epochs: args.epochs.unwrap_or(base.max_epochs),
        sga_epochs: args.sga_epochs.unwrap_or(base.sga_epochs),
        samples_per_sai: args.samples_per_sai,
        seed: args.seed.unwrap_or(0),
        fast_preset: fast,
        ..base
    };
    mcfg.validate()?;
    tcfg.validate()?;
    Ok((mcfg, tcfg))
}

/// Outcome of an encode.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeSummary {
    pub bytes: usize,
    pub bpp: f64,
    pub psnr_db: f64,
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<EncodeSummary> {
    let naming = ViewNaming::new(&args.naming)?;
    let lf = load_lightfield(&args.input, &naming)?;
    let (mcfg, tcfg) = resolve_encode(args, lf.u_count(), lf.v_count(), lf.height(), lf.width())?;
    let (trained, mut report) = train::fit(&lf, &mcfg, &tcfg)?;
    let finalized = bitstream::finalize(&trained)?;
    let bytes = bitstream::serialize_model(&finalized)?;
    std::fs::write(&args.output, &bytes)?;
    let recon = model::render_lightfield(&finalized, &finalized.latents())?;
    let psnr_db = eval::psnr(&lf, &recon)?.mean;
    let bpp = eval::bpp(bytes.len(), lf.u_count(), lf.v_count(), lf.height(), lf.width());
    report.coded_bpp = Some(bpp);
    report.final_psnr_db = psnr_db;
    let dir = report_dir(&args.output);
    report.write_csv(&dir.join("report.csv"))?;
    report.write_json(&dir.join("report.json"))?;
    Ok(EncodeSummary { bytes: bytes.len(), bpp, psnr_db })
}

fn report_dir(output: &Path) -> PathBuf {
    match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let naming = ViewNaming::new(&args.naming)?;
    let bytes = std::fs::read(&args.input)?;
    let m = bitstream::deserialize_model(&bytes)?;
    let lf = model::render_lightfield(&m, &m.latents())?;
    save_lightfield(&lf, &args.output, &naming, "sanr-decoded")
}

/// Text printed by `info`.
pub fn cmd_info(args: &InfoArgs) -> Result<String> {
    let bytes = std::fs::read(&args.input)?;
    let info = bitstream::inspect(&bytes)?;
    let h = &info.header;
    let mut s = format!(
        "version {}\nviews {}x{}\nsize {}x{}\nC_S {}  r {}  C_l {}  k {}\nsections {}\n",
        h.version, h.u_count, h.v_count, h.height, h.width, h.c_s, h.rank, h.c_l, h.k, h.sections
    );
    s += &format!("{:<10}{:>10}\n", "header", info.header_bytes);
    for sec in &info.sections {
        s += &format!("{:<10}{:>10}\n", sec.kind.name(), sec.bytes);
    }
    s += &format!("{:<10}{:>10}\n", "crc32", info.crc_bytes);
    s += &format!("{:<10}{:>10}\n", "total", info.total_bytes());
    s += &format!(
        "raw share {:.2}%  coded latents {}  coded weights {}\nbpp {:.5}\n",
        info.raw_share() * 100.0,
        info.bytes_of(SectionKind::Latents),
        info.bytes_of(SectionKind::Weights),
        info.bpp()
    );
    Ok(s)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let naming = ViewNaming::new(&args.naming)?;
    let reference = load_lightfield(&args.reference, &naming)?;
    let recon = load_lightfield(&args.recon, &naming)?;
    let bytes = std::fs::metadata(&args.stream)?.len() as usize;
    let report = eval::psnr(&reference, &recon)?;
    let bpp = eval::bpp(bytes, reference.u_count(), reference.v_count(), reference.height(), reference.width());
    let curve = RdCurve::new(&args.label, vec![RdPoint { bpp, psnr: report.mean }])?;
    let maps = ReportMaps {
        error_maps: vec![("error_map".into(), eval::avg_error_map(&reference, &recon)?)],
        view_maps: vec![("view_psnr".into(), Map::from_rows(&report.per_view))],
    };
    eval::emit_reports(&[curve], &maps, &args.output)?;
    Ok(format!("bpp {bpp:.5}  psnr {:.3} dB\n", report.mean))
}

fn check_device() -> Result<()> {
    match std::env::var("SANR_DEVICE") {
        Ok(d) if !d.eq_ignore_ascii_case("cpu") => {
            Err(Error::InvalidArgument(format!("SANR_DEVICE={d} is not available; only cpu is supported")))
        }
        _ => Ok(()),
    }
}

/// Exit status of an error: 2 for a diverged training run, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = check_device().and_then(|_| match &cli.command {
        Command::Encode(a) => cmd_encode(a).map(|s| {
            println!("wrote {} ({} bytes)  bpp {:.5}  psnr {:.3} dB", a.output.display(), s.bytes, s.bpp, s.psnr_db)
        }),
        Command::Decode(a) => cmd_decode(a).map(|_| println!("decoded into {}", a.output.display())),
        Command::Info(a) => cmd_info(a).map(|s| print!("{s}")),
        Command::Eval(a) => cmd_eval(a).map(|s| print!("{s}")),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_args(extra: &[&str]) -> EncodeArgs {
        let mut argv = vec!["sanr", "encode", "--input", "in", "--output", "out.sanr"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Encode(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn presets_resolve() {
        let (m, t) = resolve_encode(&encode_args(&["--preset", "r1", "--dataset", "epfl"]), 9, 9, 64, 64).unwrap();
        assert_eq!((m.c_s, t.lambda), (48, 0.01));
        let (m, t) = resolve_encode(&encode_args(&["--preset", "r4", "--dataset", "hci"]), 9, 9, 64, 64).unwrap();
        assert_eq!((m.c_s, t.lambda), (163, 0.0001));
        let (_, t) = resolve_encode(&encode_args(&["--preset", "fast"]), 9, 9, 64, 64).unwrap();
        assert_eq!((t.max_epochs, t.sga_epochs), (6, 1));
        let (m, t) = resolve_encode(&encode_args(&["--preset", "r3", "--preset", "fast", "--cs", "20", "--lambda", "0.2"]), 9, 9, 64, 64).unwrap();
        assert_eq!((m.c_s, t.lambda, t.max_epochs), (20, 0.2, 6));
        let (m, t) = resolve_encode(&encode_args(&[]), 9, 9, 64, 64).unwrap();
        assert_eq!((m.c_s, m.rank, m.c_l, t.max_epochs, t.sga_epochs, t.samples_per_sai, t.seed), (48, 6, 10, 30, 6, 500, 0));
    }

    #[test]
    fn strict_needs_seed() {
        assert!(resolve_encode(&encode_args(&["--strict"]), 9, 9, 64, 64).is_err());
        assert!(resolve_encode(&encode_args(&["--strict", "--seed", "7"]), 9, 9, 64, 64).is_ok());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["sanr", "encode"]), 1);
        assert_eq!(run(["sanr", "info", "--input", "/nonexistent/file.sanr"]), 1);
        assert_eq!(exit_code(&Error::Diverged { epoch: 1, iteration: 2, loss: f64::NAN }), 2);
    }
}
