//! Seeded experiment orchestration and output files.
//!
//! Output layout under `out`:
//! `<scheme>/seed<N>_metrics.csv`, `<scheme>/summary.csv`,
//! `<scheme>/metadata.txt`, optional `<scheme>/seed<N>_embeddings.csv`, and
//! `comparison.csv` for [`compare_schemes`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{DatasetKind, EpsilonUnits, Precision, RunConfig};
use crate::attacks::{AttackBudget, AttackKind};
use crate::augment::{GridShape, RmaConfig};
use crate::data::{gen_gaussian_shift, gen_grid_shift, gen_two_moons_shift, load_dataset, DomainPair};
use crate::error::{Error, Result};
use crate::eval::{export_embeddings, write_metrics_csv, EvalSuite, MetricsRecord};
use crate::nn::{Arch, Model};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::selftrain::{run_scheme, PipelineConfig, Scheme, SelfTrainConfig};
use crate::train::EpochStats;
use crate::uda::MddConfig;

/// Metrics of one seed, one record per evaluated epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// Attack radius in input units.
    pub epsilon: f64,
    pub records: Vec<MetricsRecord>,
}

impl SeedRun {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("every run records epoch 0")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scheme: Scheme,
    pub runs: Vec<SeedRun>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentResult {
    /// Final-epoch values of `metric` across seeds.
    pub fn finals(&self, metric: impl Fn(&MetricsRecord) -> Option<f64>) -> Vec<f64> {
        self.runs.iter().filter_map(|r| metric(r.last())).collect()
    }

    pub fn final_mean(&self, metric: impl Fn(&MetricsRecord) -> Option<f64>) -> f64 {
        mean_sd(&self.finals(metric)).0
    }

    pub fn clean(&self) -> f64 {
        self.final_mean(|r| Some(r.clean_acc))
    }

    pub fn robust(&self, kind: AttackKind) -> f64 {
        self.final_mean(|r| r.robust(kind))
    }

    pub fn feature_distance(&self) -> f64 {
        self.final_mean(|r| Some(r.feature_distance))
    }
}

/// Generates or loads the domain pair for `seed`.
pub fn build_data(cfg: &RunConfig, seed: u64) -> Result<DomainPair<f64>> {
    let d = &cfg.dataset;
    let mut rng = Rng::new(seed, Stream::Data);
    match d.kind {
        DatasetKind::TwoMoons => gen_two_moons_shift(d.n, d.rotation_deg, d.noise_sd, &mut rng),
        DatasetKind::Gaussian => gen_gaussian_shift(d.n, d.dim, d.mean_shift, &mut rng),
        DatasetKind::Grid => gen_grid_shift(
            d.n,
            GridShape::new(d.grid.0, d.grid.1, d.grid.2)?,
            d.style_shift,
            &mut rng,
        ),
        DatasetKind::File => load_dataset(d.path.as_ref().expect("validated")),
    }
}

/// Attack radius in input units.
pub fn resolve_epsilon(cfg: &RunConfig, pair: &DomainPair<f64>) -> f64 {
    let units = match cfg.epsilon_units {
        EpsilonUnits::Auto if pair.meta.range.is_some() => EpsilonUnits::Raw,
        EpsilonUnits::Auto => EpsilonUnits::Std,
        u => u,
    };
    match units {
        EpsilonUnits::Std => cfg.epsilon * pair.source.inputs.mean_column_sd(),
        _ => cfg.epsilon,
    }
}

fn pipeline<S: Scalar>(
    cfg: &RunConfig,
    pair: &DomainPair<S>,
    epsilon: S,
    clip: Option<(S, S)>,
) -> Result<PipelineConfig<S>> {
    let arch = Arch::new(pair.meta.dim, &cfg.hidden, pair.meta.classes, cfg.activation);
    arch.validate()?;
    let mdd = MddConfig {
        gamma: S::lit(cfg.mdd_gamma),
        eta: S::lit(cfg.mdd_eta),
        epochs: cfg.pretrain_epochs,
        lr: S::lit(cfg.pretrain_lr),
        momentum: S::lit(cfg.pretrain_momentum),
        batch_size: cfg.pretrain_batch_size,
        soft_targets: cfg.mdd_soft_targets,
        rma: if cfg.rma_enabled {
            Some(RmaConfig::new(cfg.rma_mask_ratio)?)
        } else {
            None
        },
        coordinate_dropout: cfg.coordinate_dropout,
        standard_aug: cfg.standard_aug,
    };
    mdd.validate()?;
    let alpha = if epsilon > S::zero() {
        epsilon * S::lit(cfg.alpha_ratio)
    } else {
        S::one()
    };
    let selftrain = SelfTrainConfig {
        epochs: cfg.selftrain_epochs,
        batch_size: cfg.selftrain_batch_size,
        lr: S::lit(cfg.selftrain_lr),
        beta1: S::lit(cfg.selftrain_beta1),
        beta2: S::lit(cfg.selftrain_beta2),
        meta_lr: S::lit(cfg.meta_lr),
        meta_mode: cfg.meta_mode,
        target_mode: cfg.target_mode,
        teacher_schedule: cfg.meta_schedule,
        attack: AttackBudget::pgd(epsilon, cfg.train_k, clip)?
            .with_alpha(alpha)
            .validated()?,
        standard_aug: cfg.standard_aug,
    };
    selftrain.validate()?;
    Ok(PipelineConfig { arch, mdd, selftrain })
}

fn final_epoch(cfg: &RunConfig, scheme: Scheme) -> usize {
    match scheme {
        Scheme::Uda | Scheme::SourceAt | Scheme::AtUda => cfg.pretrain_epochs,
        Scheme::UdaAt | Scheme::Srouda => cfg.selftrain_epochs,
    }
}

struct SeedOutput<S> {
    run: SeedRun,
    model: Model<S>,
    pair: DomainPair<S>,
    suite: EvalSuite<S>,
}

fn run_seed_typed<S: Scalar>(cfg: &RunConfig, scheme: Scheme, seed: u64) -> Result<SeedOutput<S>> {
    let raw = build_data(cfg, seed)?;
    let eps = resolve_epsilon(cfg, &raw);
    let pair: DomainPair<S> = raw.convert();
    let clip = pair.meta.range.map(|(lo, hi)| (S::lit(lo), S::lit(hi)));
    let epsilon = S::lit(eps);
    let pipe = pipeline(cfg, &pair, epsilon, clip)?;
    let suite = EvalSuite::new(&cfg.attacks, epsilon, pipe.selftrain.attack.alpha, clip)?;
    let last = final_epoch(cfg, scheme);
    let mut records = Vec::new();
    let mut hook = |stats: &EpochStats, model: &Model<S>, teacher: Option<&Model<S>>| -> Result<()> {
        if stats.epoch.is_multiple_of(cfg.eval_every) || stats.epoch == last {
            let at_loss = match scheme {
                Scheme::SourceAt if stats.epoch > 0 => Some(stats.loss),
                _ => stats.at_loss,
            };
            records.push(suite.evaluate(
                stats.epoch,
                scheme.name(),
                model,
                teacher,
                &pair.target_eval,
                at_loss,
                stats.meta_loss,
            )?);
        }
        Ok(())
    };
    let model = run_scheme(scheme, &pair, &pipe, seed, &mut hook)?;
    Ok(SeedOutput {
        run: SeedRun {
            seed,
            epsilon: eps,
            records,
        },
        model,
        pair,
        suite,
    })
}

fn run_seed<S: Scalar>(cfg: &RunConfig, scheme: Scheme, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let SeedOutput {
        run,
        model,
        pair,
        suite,
    } = run_seed_typed::<S>(cfg, scheme, seed)?;
    if let Some(dir) = dir {
        write_metrics_csv(&dir.join(format!("seed{seed}_metrics.csv")), &run.records)?;
        if cfg.export_embeddings {
            export_embeddings(
                &model,
                &pair.target_eval,
                &suite.feature_budget,
                &dir.join(format!("seed{seed}_embeddings.csv")),
            )?;
        }
    }
    Ok(run)
}

/// Runs `scheme` for every configured seed, seeds in parallel. Files go to
/// `dir` when given.
pub fn run_seeds(cfg: &RunConfig, scheme: Scheme, dir: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(workers) {
        let results: Vec<Result<SeedRun>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    s.spawn(move || match cfg.precision {
                        Precision::F64 => run_seed::<f64>(cfg, scheme, seed, dir),
                        Precision::F32 => run_seed::<f32>(cfg, scheme, seed, dir),
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect()
        });
        for r in results {
            runs.push(r?);
        }
    }
    Ok(ExperimentResult { scheme, runs })
}

fn scheme_dir(cfg: &RunConfig, scheme: Scheme) -> Result<PathBuf> {
    let dir = cfg.out.join(scheme.name());
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

/// `metric,mean,sd,n` over final-epoch values.
pub fn summary_text(result: &ExperimentResult, attacks: &[AttackKind]) -> String {
    let mut rows: Vec<(String, Vec<f64>)> = vec![("clean_acc".into(), result.finals(|r| Some(r.clean_acc)))];
    for &k in attacks {
        rows.push((format!("robust_{}", k.name()), result.finals(|r| r.robust(k))));
    }
    rows.push(("pseudo_acc".into(), result.finals(|r| Some(r.pseudo_acc))));
    rows.push(("at_loss".into(), result.finals(|r| r.at_loss)));
    rows.push(("meta_loss".into(), result.finals(|r| r.meta_loss)));
    rows.push(("feature_distance".into(), result.finals(|r| Some(r.feature_distance))));
    let mut out = String::from("metric,mean,sd,n\n");
    for (name, values) in rows.into_iter().filter(|(_, v)| !v.is_empty()) {
        let (mean, sd) = mean_sd(&values);
        let _ = writeln!(out, "{name},{mean:.6},{sd:.6},{}", values.len());
    }
    out
}

/// The resolved configuration followed by derived per-seed values as comments.
pub fn metadata_text(cfg: &RunConfig, result: &ExperimentResult) -> String {
    let mut out = format!("# robuda {}\n", env!("CARGO_PKG_VERSION"));
    out.push_str(&cfg.to_text());
    out.push_str("# derived\n");
    let _ = writeln!(out, "# eval.alpha = attack.epsilon_raw * {}", cfg.alpha_ratio);
    let _ = writeln!(out, "# eval.feature_distance_attack = pgd20");
    let _ = writeln!(out, "# eval.attack_target = true label");
    let _ = writeln!(
        out,
        "# selftrain.optimizer = adam; meta.optimizer = gd; pretrain.optimizer = sgd"
    );
    for run in &result.runs {
        let _ = writeln!(out, "# seed {}: attack.epsilon_raw = {}", run.seed, run.epsilon);
    }
    out
}

/// Runs `cfg.scheme` and writes metrics, summary and metadata under `cfg.out`.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dir = scheme_dir(cfg, cfg.scheme)?;
    let result = run_seeds(cfg, cfg.scheme, Some(&dir))?;
    write_reports(cfg, &dir, &result)?;
    Ok(result)
}

fn write_reports(cfg: &RunConfig, dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::write(dir.join("summary.csv"), summary_text(result, &cfg.attacks))?;
    let mut scheme_cfg = cfg.clone();
    scheme_cfg.scheme = result.scheme;
    fs::write(dir.join("metadata.txt"), metadata_text(&scheme_cfg, result))?;
    Ok(())
}

/// `scheme,clean,<attack>...` with 5-seed (or however many) final-epoch means.
pub fn comparison_text(results: &[ExperimentResult], attacks: &[AttackKind]) -> String {
    let mut out = String::from("scheme,clean");
    for k in attacks {
        let _ = write!(out, ",{}", k.name());
    }
    out.push('\n');
    for r in results {
        let _ = write!(out, "{},{:.4}", r.scheme, r.clean());
        for &k in attacks {
            let _ = write!(out, ",{:.4}", r.robust(k));
        }
        out.push('\n');
    }
    out
}

/// Runs all five schemes on identical data and seeds and writes `comparison.csv`.
pub fn compare_schemes(cfg: &RunConfig) -> Result<Vec<ExperimentResult>> {
    cfg.validate()?;
    let mut results = Vec::with_capacity(Scheme::ALL.len());
    for scheme in Scheme::ALL {
        let dir = scheme_dir(cfg, scheme)?;
        let result = run_seeds(cfg, scheme, Some(&dir))?;
        write_reports(cfg, &dir, &result)?;
        results.push(result);
    }
    fs::write(cfg.out.join("comparison.csv"), comparison_text(&results, &cfg.attacks))?;
    Ok(results)
}
