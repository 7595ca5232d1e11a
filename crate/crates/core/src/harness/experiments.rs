use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, GirmVariant, Mode, TrainConfig};
use super::report::{mean_std, spearman, RunReport};
use super::train::train;
use super::{HarnessError, Result};

/// Worker threads for fan-out, from `MTCRL_WORKERS` (default 1).
pub fn workers() -> usize {
    std::env::var("MTCRL_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1)
}

/// Train every config, preserving order.
pub fn run_many(cfgs: &[TrainConfig]) -> Result<Vec<RunReport>> {
    let w = workers().min(cfgs.len().max(1));
    if w <= 1 {
        return cfgs.iter().map(train).collect();
    }
    let mut slots: Vec<Option<Result<RunReport>>> = (0..cfgs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = cfgs.len().div_ceil(w);
        let handles: Vec<_> = cfgs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(train).collect::<Vec<_>>()))
            .collect();
        let mut i = 0;
        for h in handles {
            for r in h.join().expect("worker panicked") {
                slots[i] = Some(r);
                i += 1;
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub method: String,
    pub dataset: String,
    pub acc_train: f64,
    pub acc_val: f64,
    pub rho_spur: f64,
}

/// Per-seed STL versus MTL numbers on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub dataset: String,
    pub seed: u64,
    pub stl_acc_val: f64,
    pub mtl_acc_val: f64,
    pub stl_rho_spur: f64,
    pub mtl_rho_spur: f64,
}

impl SeedComparison {
    /// MTL leans more on spurious inputs and generalises worse.
    pub fn mtl_worse(&self) -> bool {
        self.mtl_rho_spur > self.stl_rho_spur && self.mtl_acc_val < self.stl_acc_val
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Report {
    pub rows: Vec<Table2Row>,
    pub seeds: Vec<SeedComparison>,
    pub runs: Vec<RunReport>,
}

/// STL against shared-module MTL on every base config, over `seeds`.
pub fn run_table2(bases: &[TrainConfig], seeds: &[u64]) -> Result<Table2Report> {
    let mut cfgs = Vec::new();
    for base in bases {
        for &s in seeds {
            cfgs.push(base.with_seed(s).with_mode(Mode::Stl));
            cfgs.push(base.with_seed(s).with_mode(Mode::MtlVanilla));
        }
    }
    let runs = run_many(&cfgs)?;
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for (b, base) in bases.iter().enumerate() {
        let block = &runs[b * 2 * seeds.len()..(b + 1) * 2 * seeds.len()];
        let stl: Vec<&RunReport> = block.iter().step_by(2).collect();
        let mtl: Vec<&RunReport> = block.iter().skip(1).step_by(2).collect();
        for (method, rs) in [("stl", &stl), ("mtl", &mtl)] {
            rows.push(Table2Row {
                method: method.into(),
                dataset: base.dataset.name().into(),
                acc_train: mean_std(&rs.iter().map(|r| r.acc_train()).collect::<Vec<_>>()).0,
                acc_val: mean_std(&rs.iter().map(|r| r.acc_val()).collect::<Vec<_>>()).0,
                rho_spur: mean_std(&rs.iter().map(|r| r.mean_rho_spur()).collect::<Vec<_>>()).0,
            });
        }
        for (i, &seed) in seeds.iter().enumerate() {
            per_seed.push(SeedComparison {
                dataset: base.dataset.name().into(),
                seed,
                stl_acc_val: stl[i].acc_val(),
                mtl_acc_val: mtl[i].acc_val(),
                stl_rho_spur: stl[i].mean_rho_spur(),
                mtl_rho_spur: mtl[i].mean_rho_spur(),
            });
        }
    }
    Ok(Table2Report {
        rows,
        seeds: per_seed,
        runs,
    })
}

pub fn write_table2_csv<W: Write>(w: W, report: &Table2Report) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in &report.rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tasks: usize,
    pub mtl_acc_val: f64,
    pub mtl_rho_spur: f64,
    pub stl_acc_val: f64,
    pub stl_rho_spur: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Rank correlation of task count with MTL spurious score.
    pub spearman_mtl_rho: f64,
    /// Rank correlation of task count with MTL shifted accuracy.
    pub spearman_mtl_acc: f64,
    pub mtl_rho_rises: bool,
    pub mtl_acc_falls: bool,
    pub stl_below_mtl_everywhere: bool,
    pub runs: Vec<RunReport>,
}

/// STL and MTL at each task count (Multi-SEM only), averaged over seeds.
pub fn run_task_sweep(task_counts: &[usize], base: &TrainConfig, seeds: &[u64]) -> Result<SweepReport> {
    let DatasetSpec::MultiSem(sem) = &base.dataset else {
        return Err(HarnessError::Config("task sweep needs a multi-sem dataset".into()));
    };
    if task_counts.iter().any(|&t| t < 2) {
        return Err(HarnessError::Config("task counts must be at least 2".into()));
    }
    let mut cfgs = Vec::new();
    for &t in task_counts {
        let mut c = base.clone();
        c.dataset = DatasetSpec::MultiSem(sem.with_tasks(t));
        for &s in seeds {
            cfgs.push(c.with_seed(s).with_mode(Mode::MtlVanilla));
            cfgs.push(c.with_seed(s).with_mode(Mode::Stl));
        }
    }
    let runs = run_many(&cfgs)?;
    let per_t = 2 * seeds.len();
    let points: Vec<SweepPoint> = task_counts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let block = &runs[i * per_t..(i + 1) * per_t];
            let avg = |off: usize, f: &dyn Fn(&RunReport) -> f64| {
                mean_std(&block.iter().skip(off).step_by(2).map(f).collect::<Vec<_>>()).0
            };
            SweepPoint {
                tasks: t,
                mtl_acc_val: avg(0, &|r| r.acc_val()),
                mtl_rho_spur: avg(0, &|r| r.mean_rho_spur()),
                stl_acc_val: avg(1, &|r| r.acc_val()),
                stl_rho_spur: avg(1, &|r| r.mean_rho_spur()),
            }
        })
        .collect();
    let ts: Vec<f64> = task_counts.iter().map(|&t| t as f64).collect();
    let s_rho = spearman(&ts, &points.iter().map(|p| p.mtl_rho_spur).collect::<Vec<_>>());
    let s_acc = spearman(&ts, &points.iter().map(|p| p.mtl_acc_val).collect::<Vec<_>>());
    Ok(SweepReport {
        mtl_rho_rises: s_rho > 0.0,
        mtl_acc_falls: s_acc < 0.0,
        stl_below_mtl_everywhere: points.iter().all(|p| p.stl_rho_spur < p.mtl_rho_spur),
        spearman_mtl_rho: s_rho,
        spearman_mtl_acc: s_acc,
        points,
        runs,
    })
}

pub fn write_sweep_csv<W: Write>(w: W, report: &SweepReport) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for p in &report.points {
        csv.serialize(p)?;
    }
    csv.flush()?;
    Ok(())
}

/// Named variants of a base config: the full objective and each regulariser
/// removed in turn, plus the unregularised shared model.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let full = base.with_mode(Mode::Mtcrl);
    let tweak = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = full.clone();
        f(&mut c);
        c
    };
    vec![
        ("full".into(), full.clone()),
        ("no-decor".into(), tweak(&|c| c.lambdas.decor = 0.0)),
        (
            "no-graph-reg".into(),
            tweak(&|c| {
                c.lambdas.sparsity = 0.0;
                c.lambdas.balance = 0.0;
            }),
        ),
        ("bal-only".into(), tweak(&|c| c.lambdas.sparsity = 0.0)),
        ("sps-only".into(), tweak(&|c| c.lambdas.balance = 0.0)),
        ("no-girm".into(), tweak(&|c| c.girm_variant = GirmVariant::None)),
        ("mtl-vanilla".into(), base.with_mode(Mode::MtlVanilla)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub acc_val: Vec<f64>,
    pub rho_spur: Vec<f64>,
    pub acc_val_mean: f64,
    pub acc_val_std: f64,
    pub rho_spur_mean: f64,
    pub rho_spur_std: f64,
}

impl AblationRow {
    /// `"0.915 ± 0.018"`
    pub fn display_acc(&self) -> String {
        format!("{:.3} ± {:.3}", self.acc_val_mean, self.acc_val_std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Seeds on which variant `a` has higher shifted accuracy than `b`.
    pub fn wins(&self, a: &str, b: &str) -> Option<usize> {
        let (ra, rb) = (self.row(a)?, self.row(b)?);
        Some(ra.acc_val.iter().zip(&rb.acc_val).filter(|(x, y)| x > y).count())
    }
}

/// Run the named variants (all when `only` is `None`) over `seeds`.
pub fn run_ablation(base: &TrainConfig, seeds: &[u64], only: Option<&[&str]>) -> Result<AblationReport> {
    let variants: Vec<(String, TrainConfig)> = ablation_variants(base)
        .into_iter()
        .filter(|(n, _)| only.is_none_or(|o| o.contains(&n.as_str())))
        .collect();
    if variants.is_empty() {
        return Err(HarnessError::Config("no ablation variant selected".into()));
    }
    let cfgs: Vec<TrainConfig> = variants
        .iter()
        .flat_map(|(_, c)| seeds.iter().map(move |&s| c.with_seed(s)))
        .collect();
    let runs = run_many(&cfgs)?;
    let rows = variants
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let rs = &runs[i * seeds.len()..(i + 1) * seeds.len()];
            let acc: Vec<f64> = rs.iter().map(|r| r.acc_val()).collect();
            let rho: Vec<f64> = rs.iter().map(|r| r.mean_rho_spur()).collect();
            let (am, asd) = mean_std(&acc);
            let (rm, rsd) = mean_std(&rho);
            AblationRow {
                name: name.clone(),
                acc_val: acc,
                rho_spur: rho,
                acc_val_mean: am,
                acc_val_std: asd,
                rho_spur_mean: rm,
                rho_spur_std: rsd,
            }
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

pub fn write_ablation_csv<W: Write>(w: W, report: &AblationReport) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["variant", "acc_val_mean", "acc_val_std", "rho_spur_mean", "rho_spur_std", "acc_val"])?;
    for r in &report.rows {
        csv.write_record([
            r.name.clone(),
            r.acc_val_mean.to_string(),
            r.acc_val_std.to_string(),
            r.rho_spur_mean.to_string(),
            r.rho_spur_std.to_string(),
            r.display_acc(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
