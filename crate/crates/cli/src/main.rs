use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use bender_core::config::Profile;
use bender_core::debugger::{simulate, DebugSession};
use bender_core::dram::violations_csv;
use bender_core::emulator::{RunOutcome, RunReport};
use bender_core::experiments::{
    calibrate_study1, fit_majority, run_study1, run_study2, run_study3, MajorityTargets, Study1Config, Study1Targets,
    Study2Config, Study3Config,
};
use bender_core::isa::{disassemble, read_image, IMAGE_MAGIC};
use bender_core::platform::{trace_csv, Platform, PosTask};
use bender_core::program::{Assembled, Program};

#[derive(Parser)]
#[command(name = "bender", version, about = "Software DRAM testing platform")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a text program into a binary image.
    Asm {
        source: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print the instructions of a binary image.
    Disasm { image: PathBuf },
    /// Execute a program and report commands, stalls and violations.
    Run {
        program: PathBuf,
        #[arg(long, default_value = "ddr4_default")]
        profile: String,
        /// Write the issued-command trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write timing and state violations as CSV.
        #[arg(long)]
        violations: Option<PathBuf>,
        #[arg(long)]
        max_cycles: Option<u64>,
        #[arg(long, value_enum, default_value = "off")]
        refresh: Switch,
        /// Transfers the host drains per core cycle.
        #[arg(long)]
        drain_rate: Option<f64>,
        /// Number of transfers to receive after the run.
        #[arg(long, default_value_t = 0)]
        receive: usize,
    },
    /// Check a program for timing violations without a debugger session.
    Check {
        program: PathBuf,
        #[arg(long, default_value = "ddr4_default")]
        profile: String,
    },
    /// Interactive debugger reading commands from stdin.
    Debug {
        program: PathBuf,
        #[arg(long, default_value = "ddr4_default")]
        profile: String,
        /// Write a waveform of the session as VCD on exit.
        #[arg(long)]
        vcd: Option<PathBuf>,
    },
    /// Interleaved double-sided hammering sweep.
    Study1 {
        #[command(flatten)]
        common: StudyArgs,
        #[arg(long)]
        full_bank: bool,
        #[arg(long)]
        triples: Option<u32>,
        /// Skip the emulated cross-check of the first triple.
        #[arg(long)]
        no_emulate: bool,
    },
    /// Repeated-byte versus random aggressor data coverage.
    Study2 {
        #[command(flatten)]
        common: StudyArgs,
        #[arg(long)]
        victims: Option<u32>,
    },
    /// AND/OR bit error rates across violated timing combinations.
    Study3 {
        #[command(flatten)]
        common: StudyArgs,
        #[arg(long)]
        segments: Option<u32>,
    },
    /// Fit a profile's disturbance model to interleaving endpoints.
    Calibrate {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        flips_t1: Option<f64>,
        #[arg(long)]
        flips_tmax: Option<f64>,
        #[arg(long)]
        hc_t1: Option<f64>,
        #[arg(long)]
        hc_tmax: Option<f64>,
        #[arg(long)]
        triples: Option<u32>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Fit a profile's segment error model to majority-operation counts.
    FitMajority {
        #[arg(long, default_value = "mfrB")]
        profile: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 35)]
        and_only_3: u32,
        #[arg(long, default_value_t = 160)]
        both_5: u32,
        #[arg(long, default_value_t = 4546)]
        both_10: u32,
        #[arg(long, default_value_t = 8192)]
        segments: u32,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// List built-in profiles.
    Profiles,
}

#[derive(clap::Args)]
struct StudyArgs {
    #[arg(long)]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn load_profile(spec: &str) -> Result<Profile> {
    Ok(Profile::resolve(spec)?)
}

/// Reads a binary image, or assembles a text program.
fn load_program(path: &Path) -> Result<Assembled> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(IMAGE_MAGIC) {
        let instructions = read_image(&bytes)?;
        return Ok(Assembled {
            instructions,
            labels: Default::default(),
            hints: Vec::new(),
            sizing: bender_core::program::HintSizing::Static,
            image: bytes,
        });
    }
    let text = String::from_utf8(bytes).context("program is neither an image nor UTF-8 text")?;
    Ok(Program::parse(&text)?.assemble()?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_report(r: &RunReport) {
    let outcome = match &r.outcome {
        RunOutcome::Halted => "halted".to_string(),
        RunOutcome::Trapped(t) => format!("trapped: {t}"),
        RunOutcome::MaxCyclesExceeded => "cycle budget exceeded".to_string(),
    };
    let h = &r.histogram;
    println!("outcome: {outcome}");
    println!("cycles: {}  bus slots: {}  instructions: {}", r.cycles, r.bus_slots, r.instructions);
    println!(
        "commands: ACT {} PRE {} PREA {} READ {} WRITE {} REF {} ZQS {}",
        h.act, h.pre, h.prea, h.read, h.write, h.refresh, h.zqs
    );
    println!(
        "stalls: hint {} scheduler {} load-use {}",
        r.stalls.hint, r.stalls.scheduler, r.stalls.load_use
    );
    println!(
        "transfers: {}  fifo high water: {}  overflows: {}  injections: {}  flips: {}",
        r.transfers, r.fifo_high_water, r.fifo_overflows, r.injections.len(), r.flips
    );
    println!("violations: {}", r.violations.len());
}

fn study_dir(out: &Path, study: &str, profile: &Profile, seed: u64) -> PathBuf {
    out.join(format!("{study}_{}_{seed}", profile.name))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Asm { source, out } => {
            let a = load_program(&source)?;
            fs::write(&out, &a.image)?;
            println!("{} instructions", a.instructions.len());
        }
        Cmd::Disasm { image } => {
            let bytes = fs::read(&image)?;
            let mut out = io::stdout().lock();
            for (i, instr) in read_image(&bytes)?.iter().enumerate() {
                match writeln!(out, "{i:5}  {}", disassemble(instr)) {
                    Err(e) if e.kind() == io::ErrorKind::BrokenPipe => break,
                    r => r?,
                }
            }
        }
        Cmd::Run { program, profile, trace, violations, max_cycles, refresh, drain_rate, receive } => {
            let a = load_program(&program)?;
            let mut p = Platform::new(&load_profile(&profile)?);
            if let Some(m) = max_cycles {
                p.set_max_cycles(m);
            }
            if let Some(r) = drain_rate {
                p.set_drain_rate(r);
            }
            p.set_periodic(PosTask::Refresh, matches!(refresh, Switch::On));
            p.enable_trace(trace.is_some());
            let report = p.execute(&a.image)?;
            print_report(&report);
            if receive > 0 {
                let got = p.receive_data(receive);
                println!("received: {}", got.len());
            }
            if let Some(path) = trace {
                write(&path, &trace_csv(p.sys.trace()))?;
            }
            if let Some(path) = violations {
                write(&path, &violations_csv(&report.violations))?;
            }
        }
        Cmd::Check { program, profile } => {
            let a = load_program(&program)?;
            let report = simulate(&a.image, &load_profile(&profile)?)?;
            if report.is_clean() {
                println!("no violations");
            } else {
                print!("{}", report.render());
            }
        }
        Cmd::Debug { program, profile, vcd } => {
            let a = load_program(&program)?;
            let mut s = DebugSession::new(&load_profile(&profile)?, a)?;
            if vcd.is_some() {
                s.record_waveform();
            }
            s.repl(BufReader::new(io::stdin()), io::stdout())?;
            if let (Some(path), Some(text)) = (vcd, s.vcd()) {
                write(&path, &text)?;
            }
        }
        Cmd::Study1 { common, full_bank, triples, no_emulate } => {
            let profile = load_profile(&common.profile)?;
            let mut cfg = if full_bank { Study1Config::full_bank(&profile) } else { Study1Config::default() };
            cfg.seed = common.seed;
            cfg.emulate_first_triple = !no_emulate;
            if let Some(t) = triples {
                cfg.triples = t;
            }
            let r = run_study1(&profile, &cfg)?;
            let dir = study_dir(&common.out, "study1", &profile, r.seed);
            write(&dir.join("study1.csv"), &r.csv())?;
            write(&dir.join("summary.txt"), &r.summary())?;
            print!("{}", r.summary());
        }
        Cmd::Study2 { common, victims } => {
            let profile = load_profile(&common.profile)?;
            let mut cfg = Study2Config { seed: common.seed, ..Study2Config::default() };
            if let Some(v) = victims {
                cfg.victims = v;
            }
            let r = run_study2(&profile, &cfg)?;
            let dir = study_dir(&common.out, "study2", &profile, r.seed);
            write(&dir.join("study2.csv"), &r.csv())?;
            write(&dir.join("summary.txt"), &r.summary())?;
            print!("{}", r.summary());
        }
        Cmd::Study3 { common, segments } => {
            let profile = load_profile(&common.profile)?;
            let mut cfg = Study3Config { seed: common.seed, ..Study3Config::default() };
            if let Some(s) = segments {
                cfg.segments = s;
            }
            let r = run_study3(&profile, &cfg)?;
            let dir = study_dir(&common.out, "study3", &profile, r.seed);
            write(&dir.join("study3.csv"), &r.csv())?;
            write(&dir.join("summary.txt"), &r.summary())?;
            print!("{}", r.summary());
        }
        Cmd::Calibrate { profile, seed, flips_t1, flips_tmax, hc_t1, hc_tmax, triples, out } => {
            let base = load_profile(&profile)?;
            let reference = Study1Targets::reference(&base.name);
            let pick = |given: Option<f64>, f: fn(&Study1Targets) -> f64, name: &str| -> Result<f64> {
                match (given, reference.as_ref()) {
                    (Some(v), _) => Ok(v),
                    (None, Some(r)) => Ok(f(r)),
                    (None, None) => bail!("--{name} is required for profile {}", base.name),
                }
            };
            let targets = Study1Targets {
                flips_t1: pick(flips_t1, |t| t.flips_t1, "flips-t1")?,
                flips_tmax: pick(flips_tmax, |t| t.flips_tmax, "flips-tmax")?,
                hc_first_t1: pick(hc_t1, |t| t.hc_first_t1, "hc-t1")?,
                hc_first_tmax: pick(hc_tmax, |t| t.hc_first_tmax, "hc-tmax")?,
            };
            let mut cfg = Study1Config { seed, ..Study1Config::default() };
            if let Some(t) = triples {
                cfg.triples = t;
            }
            let (fitted, report) = calibrate_study1(&base, &targets, &cfg)?;
            println!("alternation bonus: {}", report.alternation_bonus);
            println!(
                "threshold: location {} median {} shape {}",
                report.threshold.location, report.threshold.median, report.threshold.shape
            );
            println!("achieved: {:?}", report.achieved);
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}.json", fitted.name)));
            write(&path, &(fitted.to_json() + "\n"))?;
        }
        Cmd::FitMajority { profile, seed, and_only_3, both_5, both_10, segments, out } => {
            let base = load_profile(&profile)?;
            let targets = MajorityTargets { and_only_3, both_5, both_10, segments };
            let (fitted, report) = fit_majority(&base, &targets, seed, 0)?;
            println!(
                "or_median {} or_sigma {} and_gap {}",
                report.or_median, report.or_sigma, report.and_gap
            );
            println!("counts: {:?}", report.counts);
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}.json", fitted.name)));
            write(&path, &(fitted.to_json() + "\n"))?;
        }
        Cmd::Profiles => {
            for name in Profile::builtin_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}
