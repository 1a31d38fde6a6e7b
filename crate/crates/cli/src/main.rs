use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use resect_core::baseline::baseline_segment;
use resect_core::cohort::{
    assign_folds, emit_report, generate_phantom_cohort, load_manifest, read_patients_csv, run_experiment,
    ExperimentConfig, FoldAssignment, FoldPlan, MetricReport, PhantomParams, PredictionSource,
};
use resect_core::metrics::{consensus_vote, dice, interrater_scores};
use resect_core::nifti::{read_mask, read_probability, read_volume, write_mask, write_volume, DataType};
use resect_core::post::{ensemble_average, run_postprocess, threshold_sweep};

#[derive(Parser)]
#[command(name = "resect-eval", version, about = "Residual tumor post-processing and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort with manifest and fold plan.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Otsu baseline segmentation with T1w blood exclusion.
    Baseline {
        #[arg(long)]
        t1ce: PathBuf,
        #[arg(long)]
        t1w: PathBuf,
        #[arg(long)]
        brain: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binarize, drop small components and classify GTR vs residual tumor.
    Postprocess {
        #[arg(long)]
        prob: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// 6, 18 or 26.
        #[arg(long)]
        connectivity: Option<String>,
        #[arg(long)]
        min_voxels: Option<usize>,
        #[arg(long)]
        cutoff_ml: Option<f64>,
        /// Where to write the cleaned mask.
        #[arg(long)]
        out_mask: Option<PathBuf>,
        /// Where to write the verdict as JSON (stdout otherwise).
        #[arg(long)]
        out_verdict: Option<PathBuf>,
        /// Settings file; the flags above override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print a CSV over this many evenly spaced thresholds in [0, 1] instead.
        #[arg(long, conflicts_with_all = ["out_mask", "out_verdict"])]
        sweep: Option<usize>,
        /// Reference mask for the sweep's Dice column.
        #[arg(long, requires = "sweep")]
        gt: Option<PathBuf>,
    },
    /// Voxel-wise average of probability maps.
    Ensemble {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        probs: Vec<PathBuf>,
    },
    /// Score a cohort and write per-patient and cohort tables.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fold plan; without one the manifest's `fold` column is used.
        #[arg(long)]
        fold_plan: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory (overrides `output_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the Otsu baseline instead of the manifest's predictions.
        #[arg(long)]
        baseline: bool,
    },
    /// Per-rater Jaccard against a reference or the consensus of all raters.
    Interrater {
        /// Reference mask; the strict-majority consensus when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Rater masks as `name=path`.
        #[arg(required = true)]
        raters: Vec<String>,
        #[arg(long)]
        consensus_out: Option<PathBuf>,
    },
    /// GTR vs residual tumor confusion and rates from a per-patient table.
    ClassifyEval {
        #[arg(long)]
        patients: PathBuf,
    },
    /// Rebuild cohort tables from a per-patient table.
    Report {
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "recomputed")]
        label: String,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => ExperimentConfig::default(),
    })
}

fn volume(p: &Path) -> anyhow::Result<resect_core::grid::VoxelGrid> {
    read_volume(p).with_context(|| format!("reading {}", p.display()))
}

fn mask(p: &Path) -> anyhow::Result<resect_core::grid::BinaryMask> {
    read_mask(p).with_context(|| format!("reading {}", p.display()))
}

fn probability(p: &Path) -> anyhow::Result<resect_core::grid::VoxelGrid> {
    read_probability(p).with_context(|| format!("reading {}", p.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { out, patients, seed } => {
            let cohort = generate_phantom_cohort(&out, patients, seed, &PhantomParams::default())?;
            let rt = cohort.truths.iter().filter(|t| t.gt_volume_ml >= resect_core::post::GTR_CUTOFF_ML).count();
            println!(
                "{}",
                json!({
                    "manifest": cohort.manifest,
                    "fold_plan": cohort.fold_plan,
                    "patients": cohort.truths.len(),
                    "rt": rt,
                    "gtr": cohort.truths.len() - rt,
                })
            );
        }
        Command::Baseline { t1ce, t1w, brain, out } => {
            let res = baseline_segment(&volume(&t1ce)?, &volume(&t1w)?, &mask(&brain)?)?;
            write_volume(&res.prob, &out, DataType::F32)?;
            println!("{}", json!({ "t1ce_bin": res.t1ce_bin, "t1w_bin": res.t1w_bin, "warnings": res.warnings }));
        }
        Command::Postprocess {
            prob,
            threshold,
            connectivity,
            min_voxels,
            cutoff_ml,
            out_mask,
            out_verdict,
            config,
            sweep,
            gt,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            let overrides = [
                ("threshold", threshold.map(|v| v.to_string())),
                ("connectivity", connectivity),
                ("min_voxels", min_voxels.map(|v| v.to_string())),
                ("cutoff_ml", cutoff_ml.map(|v| v.to_string())),
            ];
            for (key, value) in overrides {
                if let Some(v) = value {
                    cfg.set(key, &v)?;
                }
            }
            cfg.validate()?;
            let prob = probability(&prob)?;
            if let Some(steps) = sweep {
                let gt = gt.as_deref().map(mask).transpose()?;
                println!("threshold,components_found,components_kept,volume_ml,classification,dice");
                for (t, o) in threshold_sweep(&prob, &cfg.post, steps)? {
                    let d = match &gt {
                        Some(g) => dice(g, &o.mask)?.map(|d| d.to_string()).unwrap_or_default(),
                        None => String::new(),
                    };
                    println!(
                        "{t},{},{},{},{},{d}",
                        o.components_found, o.components_kept, o.verdict.residual_volume_ml, o.verdict.classification
                    );
                }
                return Ok(());
            }
            let outcome = run_postprocess(&prob, &cfg.post)?;
            if let Some(out) = out_mask {
                write_mask(&outcome.mask, out)?;
            }
            let text = serde_json::to_string_pretty(&json!({
                "verdict": outcome.verdict,
                "components_found": outcome.components_found,
                "components_kept": outcome.components_kept,
                "params": cfg.post,
            }))?;
            match out_verdict {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Command::Ensemble { out, probs } => {
            let maps = probs.iter().map(|p| probability(p)).collect::<anyhow::Result<Vec<_>>>()?;
            write_volume(&ensemble_average(&maps)?, out, DataType::F32)?;
        }
        Command::Evaluate { manifest, config, fold_plan, workers, out, baseline } => {
            let mut cfg = load_config(config.as_deref())?;
            if baseline {
                cfg.source = PredictionSource::Baseline;
            }
            let cohort = load_manifest(&manifest)?;
            let assignment = match fold_plan {
                Some(p) => assign_folds(&cohort, &FoldPlan::load(p)?)?,
                None => FoldAssignment::from_manifest_column(&cohort)?,
            };
            let report = run_experiment(&cfg, &cohort, &assignment, workers)?;
            let dir = match out.or(cfg.output_dir.clone()) {
                Some(d) => d,
                None => bail!("no output directory: pass --out or set output_dir"),
            };
            let files = emit_report(&report, &dir, &cfg.formats)?;
            let failed = report.patients.iter().filter(|p| p.score.is_none()).count();
            println!(
                "{}",
                json!({
                    "patients": report.patients.len(),
                    "failed": failed,
                    "patients_csv": files.patients_csv,
                    "cohort_csv": files.cohort_csv,
                    "markdown": files.markdown,
                })
            );
        }
        Command::Interrater { reference, raters, consensus_out } => {
            let named = raters
                .iter()
                .map(|spec| {
                    let (name, path) =
                        spec.split_once('=').with_context(|| format!("rater '{spec}' is not name=path"))?;
                    Ok((name.to_string(), mask(Path::new(path))?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let masks: Vec<_> = named.iter().map(|(_, m)| m.clone()).collect();
            let consensus = consensus_vote(&masks)?;
            if let Some(p) = consensus_out {
                write_mask(&consensus, p)?;
            }
            let reference = match reference {
                Some(p) => mask(&p)?,
                None => consensus,
            };
            println!("rater,jaccard");
            for s in interrater_scores(&named, &reference)? {
                println!("{},{}", s.rater, s.jaccard.map(|j| j.to_string()).unwrap_or_default());
            }
        }
        Command::ClassifyEval { patients } => {
            let text = std::fs::read_to_string(&patients)?;
            let report = MetricReport::from_patients("classification", read_patients_csv(&text)?);
            let rows: Vec<_> = report
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "protocol": r.protocol.to_string(),
                        "confusion": r.classification_counts,
                        "sensitivity": r.sensitivity,
                        "specificity": r.specificity,
                        "bacc": r.bacc,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
        Command::Report { patients, out, label } => {
            let text = std::fs::read_to_string(&patients)?;
            let report = MetricReport::from_patients(label, read_patients_csv(&text)?);
            let cfg = ExperimentConfig::default();
            emit_report(&report, out, &cfg.formats)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<resect_core::Error>())
                .map(|e| e.kind())
                .unwrap_or("error");
            eprintln!("{}", json!({ "error": kind, "message": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}
