use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use mtcrl::analysis::{
    heatmap_svg, module_corr_heatmap, saliency_report, task_module_gradients, write_matrix_csv, write_saliency_csv,
    write_similarity_csv,
};
use mtcrl::data::export::{write_container, write_csv};
use mtcrl::harness::{
    desk_multisem, run_ablation, run_table2, run_task_sweep, train, train_on, write_ablation_csv, write_sweep_csv,
    write_table2_csv, HarnessError, TrainConfig,
};
use mtcrl::oracles::{run_oracle_checks, write_oracle_csv};

#[derive(Parser)]
#[command(name = "mtcrl", version, about = "Multi-task causal representation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON training config; the built-in Multi-SEM preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed, or first seed for multi-seed commands.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset as a binary container plus CSV.
    GenData(Common),
    /// Train one run and write its report.
    Train(Common),
    /// Single-task versus shared multi-task comparison.
    Table2 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Multi-task versus single-task across task counts.
    SweepTasks {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        tasks: Vec<usize>,
    },
    /// Regulariser ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Comma-separated subset of variants; all when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Check closed-form oracles against numerical references.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
    },
    /// Train once and write saliency, correlation and routing diagnostics.
    Analyze(Common),
}

enum Failure {
    Usage(String),
    Run(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => Failure::Usage(m),
            other => Failure::Run(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

macro_rules! run_err {
    ($e:expr) => {
        $e.map_err(|e| Failure::Run(HarnessError::from(e)))
    };
}

fn load_config(c: &Common) -> Result<TrainConfig, Failure> {
    let cfg = match &c.config {
        Some(p) => TrainConfig::load(p)?,
        None => desk_multisem(),
    };
    Ok(match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn seed_list(c: &Common, n: usize) -> Vec<u64> {
    let first = c.seed.unwrap_or(0);
    (first..first + n as u64).collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    Ok(fs::write(dir.join(name), text)?)
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable")
}

fn execute(cmd: &Command) -> Result<bool, Failure> {
    match cmd {
        Command::GenData(c) => {
            let cfg = load_config(c)?;
            fs::create_dir_all(&c.out)?;
            let data = cfg.dataset.generate()?;
            let batches = [data.train, data.valid, data.test];
            run_err!(write_container(create(&c.out, "data.mtcrl")?, &batches))?;
            for b in &batches {
                run_err!(write_csv(create(&c.out, &format!("{}.csv", b.name))?, std::slice::from_ref(b)))?;
            }
            write_text(&c.out, "config.json", &cfg.to_json())?;
        }
        Command::Train(c) => {
            let cfg = load_config(c)?;
            fs::create_dir_all(&c.out)?;
            let report = train(&cfg)?;
            write_text(&c.out, "report.json", &report.to_json())?;
            println!("acc_train {:.4} acc_val {:.4} rho_spur {:.4}", report.acc_train(), report.acc_val(), report.mean_rho_spur());
        }
        Command::Table2 { common: c, seeds } => {
            let cfg = load_config(c)?;
            fs::create_dir_all(&c.out)?;
            let report = run_table2(&[cfg], &seed_list(c, *seeds))?;
            write_table2_csv(create(&c.out, "table2.csv")?, &report)?;
            write_text(&c.out, "table2.json", &pretty(&report))?;
            for r in &report.rows {
                println!("{:4} {:12} acc_train {:.4} acc_val {:.4} rho_spur {:.4}", r.method, r.dataset, r.acc_train, r.acc_val, r.rho_spur);
            }
        }
        Command::SweepTasks { common: c, seeds, tasks } => {
            let cfg = load_config(c)?;
            fs::create_dir_all(&c.out)?;
            let report = run_task_sweep(tasks, &cfg, &seed_list(c, *seeds))?;
            write_sweep_csv(create(&c.out, "sweep.csv")?, &report)?;
            write_text(&c.out, "sweep.json", &pretty(&report))?;
            println!(
                "spearman(T, mtl rho) {:.3}  spearman(T, mtl acc) {:.3}  stl below mtl everywhere: {}",
                report.spearman_mtl_rho, report.spearman_mtl_acc, report.stl_below_mtl_everywhere
            );
        }
        Command::Ablate { common: c, seeds, variants } => {
            let cfg = load_config(c)?;
            fs::create_dir_all(&c.out)?;
            let names: Option<Vec<&str>> = variants.as_ref().map(|v| v.iter().map(String::as_str).collect());
            let report = run_ablation(&cfg, &seed_list(c, *seeds), names.as_deref())?;
            write_ablation_csv(create(&c.out, "ablation.csv")?, &report)?;
            write_text(&c.out, "ablation.json", &pretty(&report))?;
            for r in &report.rows {
                println!("{:14} acc_val {}  rho_spur {:.4}", r.name, r.display_acc(), r.rho_spur_mean);
            }
        }
        Command::OracleCheck { common: c, seeds } => {
            fs::create_dir_all(&c.out)?;
            let checks = run_oracle_checks(c.seed.unwrap_or(0), *seeds);
            run_err!(write_oracle_csv(create(&c.out, "oracle_check.csv")?, &checks))?;
            run_err!(write_oracle_csv(std::io::stdout(), &checks))?;
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Analyze(c) => {
            let cfg = load_config(c)?;
            fs::create_dir_all(&c.out)?;
            let data = cfg.dataset.generate()?;
            let (report, models) = train_on(&cfg, &data)?;
            write_text(&c.out, "report.json", &report.to_json())?;
            write_similarity_csv(create(&c.out, "similarity.csv")?, &report.similarity).map_err(HarnessError::from)?;
            let model = &models[0];
            if models.len() == 1 {
                let sal = saliency_report(model, &data.test).map_err(HarnessError::from)?;
                write_saliency_csv(create(&c.out, "saliency.csv")?, &sal, &data.test.causal_masks)
                    .map_err(HarnessError::from)?;
                let heat = module_corr_heatmap(model, &data.train.inputs[0]).map_err(HarnessError::from)?;
                write_matrix_csv(create(&c.out, "module_corr.csv")?, &heat.matrix, "dim", "dim")
                    .map_err(HarnessError::from)?;
                write_text(&c.out, "module_corr.svg", &heatmap_svg(&heat.matrix, heat.block, 8))?;
                let tmg = task_module_gradients(model, &[data.train.clone(), data.valid.clone()])
                    .map_err(HarnessError::from)?;
                write_matrix_csv(create(&c.out, "task_module_grad_diff.csv")?, &tmg.difference, "task", "module")
                    .map_err(HarnessError::from)?;
                write_matrix_csv(create(&c.out, "routing.csv")?, &report.routing, "task", "module")
                    .map_err(HarnessError::from)?;
            }
            println!("acc_val {:.4} rho_spur {:.4}", report.acc_val(), report.mean_rho_spur());
        }
    }
    Ok(true)
}

fn out_dir(cmd: &Command) -> &Path {
    match cmd {
        Command::GenData(c) | Command::Train(c) | Command::Analyze(c) => &c.out,
        Command::Table2 { common, .. }
        | Command::SweepTasks { common, .. }
        | Command::Ablate { common, .. }
        | Command::OracleCheck { common, .. } => &common.out,
    }
}

fn write_diagnostic(dir: &Path, err: &HarnessError) {
    let diagnostic = match err {
        HarnessError::NonFinite(d) => serde_json::to_value(d).ok(),
        _ => None,
    };
    let body = serde_json::json!({ "error": err.to_string(), "diagnostic": diagnostic });
    let path = dir.join("error.json");
    if fs::create_dir_all(dir).and_then(|_| fs::write(&path, pretty(&body))).is_ok() {
        eprintln!("diagnostic written to {}", path.display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            write_diagnostic(out_dir(&cli.command), &e);
            ExitCode::from(1)
        }
    }
}
