use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use lesiongraph::checkpoint::Checkpoint;
use lesiongraph::cohortsynth::synth_cohort;
use lesiongraph::config::RunConfig;
use lesiongraph::evalkit::{crossval, stratified_folds, write_sweep_csv};
use lesiongraph::experiment::{compare_schemes, crossval_scheme, write_report, CompareConfig, SchemeSummary};
use lesiongraph::gcn::{fit_fold, write_history, Propagator};
use lesiongraph::lesiongeom::{describe_with, write_descriptors};
use lesiongraph::popgraph::{
    apply_threshold, build_full_weighted, build_identical, build_random, load_cohort, save_features, write_metadata,
    Cohort, CohortPrep, EdgeScheme, PopulationGraph,
};
use lesiongraph::rulergen::{read_manifest, synthesize_batch, write_manifest};
use lesiongraph::scalenet::{peak_estimate_with, train, Conv1dRegressor, RegressorHyper, ScaleDataset};
use lesiongraph::tpcf::{signature, SIGNATURE_BINS};
use lesiongraph::{BinaryMask, Error, Result, TpcfSignature};
use ndarray::Array2;

#[derive(Parser)]
#[command(name = "lesiongraph", version, about = "Ruler-scale calibration, lesion geometry and population-graph classification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Args)]
struct CohortFiles {
    #[arg(long)]
    metadata: PathBuf,
    /// `GDFM` feature file, or CSV when the name ends in `.csv`.
    #[arg(long)]
    features: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize ruler masks with known scale.
    SynthRulers {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Correlation signatures of every PGM mask in a directory.
    Tpcf {
        #[arg(long)]
        masks: PathBuf,
    },
    /// Train the scale regressor on signatures with manifest ground truth.
    TrainScale {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        signatures: PathBuf,
    },
    /// Estimate px/mm for each signature.
    EstimateScale {
        #[arg(long)]
        signatures: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// cnn or peak.
        #[arg(long)]
        method: Option<String>,
    },
    /// Millimetre descriptors of every PGM lesion mask in a directory.
    Geometry {
        #[arg(long)]
        masks: PathBuf,
        /// One px/mm for all masks.
        #[arg(long, conflicts_with = "scales")]
        rho: Option<f64>,
        /// Per-mask px/mm from estimate-scale.
        #[arg(long)]
        scales: Option<PathBuf>,
    },
    /// Synthetic cohort with planted class structure.
    SynthCohort {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Population graph edge list.
    BuildGraph {
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<String>,
        /// Node count for schemes that need no metadata.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Cross-validated metrics at each threshold.
    SweepThresholds {
        #[command(flatten)]
        files: CohortFiles,
    },
    /// Cross-validated GCN training; writes out-of-fold probabilities.
    TrainGcn {
        #[command(flatten)]
        files: CohortFiles,
        /// Edge list from build-graph; otherwise built from graph.scheme.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Cross-validated image-only baseline.
    TrainAnn {
        #[command(flatten)]
        files: CohortFiles,
    },
    /// Metrics of out-of-fold probabilities.
    Evaluate {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Comparison table from metric files, or a full comparison run on a cohort.
    Report {
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, requires = "features")]
        metadata: Option<PathBuf>,
        #[arg(long, requires = "metadata")]
        features: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cmd = Cli::command().after_long_help(RunConfig::describe_keys());
    let matches = cmd.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.cmd, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn resolve(common: &Common, overrides: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    fs::create_dir_all(&common.out).map_err(|e| Error::Io { path: common.out.clone(), source: e })?;
    cfg.save(&common.out.join("config.resolved"))?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_at(path))
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

/// PGM files of a directory in name order, with their stems as ids.
fn list_masks(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(io_at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!("{}: no .pgm masks found", dir.display())));
    }
    Ok(out)
}

fn read_signatures(path: &Path) -> Result<Vec<(String, TpcfSignature)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let bins: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format { path: path.into(), line: i + 2, msg: "non-numeric bin".into() })?;
        let sig = TpcfSignature::from_bins(bins).map_err(|e| Error::Format { path: path.into(), line: i + 2, msg: e.to_string() })?;
        out.push((rec[0].to_string(), sig));
    }
    Ok(out)
}

fn read_scales(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let rho = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format { path: path.into(), line: i + 2, msg: "expected id,rho_hat".into() })?;
            Ok((rec[0].to_string(), rho))
        })
        .collect()
}

fn random_edge_count(cfg: &RunConfig, full: Option<&PopulationGraph>) -> Result<usize> {
    let n = cfg.usize("graph.random_edges")?;
    if n > 0 {
        return Ok(n);
    }
    let full = full.ok_or_else(|| Error::Config("random scheme needs graph.random_edges or metadata".into()))?;
    Ok(apply_threshold(full, cfg.f64("graph.threshold")?).n_edges())
}

/// Graph for `graph.scheme`, with the threshold used, if any.
fn scheme_graph(cfg: &RunConfig, records: Option<&Cohort>, n: Option<usize>) -> Result<(PopulationGraph, Option<f64>)> {
    let scheme: EdgeScheme = cfg.get("graph.scheme").parse()?;
    let n_nodes = records.map(Cohort::len).or(n).ok_or_else(|| Error::Config("either --metadata or --n is required".into()))?;
    let full = match (scheme, records) {
        (EdgeScheme::Full | EdgeScheme::Threshold, None) => {
            return Err(Error::Config(format!("the {} scheme needs --metadata", scheme.name())))
        }
        (EdgeScheme::Identical, _) => None,
        (_, Some(c)) if scheme != EdgeScheme::Random || cfg.usize("graph.random_edges")? == 0 => {
            Some(build_full_weighted(c, &CohortPrep::new(&c.records), &cfg.edge_config()?)?)
        }
        _ => None,
    };
    Ok(match scheme {
        EdgeScheme::Full => (full.expect("built above"), None),
        EdgeScheme::Threshold => {
            let t = cfg.f64("graph.threshold")?;
            (apply_threshold(full.as_ref().expect("built above"), t), Some(t))
        }
        EdgeScheme::Random => (build_random(n_nodes, random_edge_count(cfg, full.as_ref())?, cfg.u64("seed")?)?, None),
        EdgeScheme::Identical => (build_identical(n_nodes), None),
    })
}

/// Metadata only, with an empty feature matrix.
fn metadata_only(path: &Path) -> Result<Cohort> {
    let records = lesiongraph::popgraph::read_metadata(path)?;
    let n = records.len();
    Cohort::new(records, Array2::zeros((n, 0)))
}

fn compare_config(cfg: &RunConfig) -> Result<CompareConfig> {
    Ok(CompareConfig {
        n_classes: cfg.usize("cohort.classes")?,
        k_folds: cfg.usize("gcn.folds")?,
        thresholds: cfg.f64_list("sweep.thresholds")?,
        edge: cfg.edge_config()?,
        fit: cfg.fit_config()?,
        eval: cfg.eval_config()?,
        seed: cfg.u64("seed")?,
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RunInfo {
    scheme: String,
    threshold: Option<f64>,
    edges: Option<usize>,
}

/// Cross-validated training that keeps every fold's model and history and
/// the out-of-fold probabilities.
fn train_crossval(out: &Path, cfg: &RunConfig, cohort: &Cohort, prop: &Propagator, info: RunInfo) -> Result<()> {
    let cc = compare_config(cfg)?;
    let labels = cohort.labels(cc.n_classes)?;
    let folds = stratified_folds(&labels, cc.k_folds, cc.seed)?;
    let mut oof = Array2::zeros((cohort.len(), cc.n_classes));
    for f in 0..cc.k_folds {
        let r = fit_fold(prop, &cohort.features, &labels, &folds, f, cc.n_classes, &cc.fit)?;
        let p = r.model.predict(prop, &cohort.features)?;
        for v in (0..cohort.len()).filter(|&v| folds[v] == f) {
            oof.row_mut(v).assign(&p.row(v));
        }
        log::info!("fold {f}: best epoch {} of {}", r.best_epoch, r.epochs_run);
        r.model.to_checkpoint().save(&out.join(format!("fold{f}.gdsn")))?;
        if cc.fit.train.record_history {
            write_with(&out.join(format!("history_fold{f}_labeled.csv")), |w| write_history(w, &r.labeled_history))?;
            write_with(&out.join(format!("history_fold{f}_heldout.csv")), |w| write_history(w, &r.heldout_history))?;
        }
    }
    write_with(&out.join("probs.csv"), |w| {
        let cols: Vec<String> = (0..cc.n_classes).map(|k| format!("p{k}")).collect();
        writeln!(w, "id,fold,{}", cols.join(","))?;
        for (v, rec) in cohort.records.iter().enumerate() {
            let ps: Vec<String> = oof.row(v).iter().map(f64::to_string).collect();
            writeln!(w, "{},{},{}", rec.id, folds[v], ps.join(","))?;
        }
        Ok(())
    })?;
    let json = serde_json::to_string_pretty(&info).expect("serializable");
    fs::write(out.join("run.json"), json).map_err(io_at(&out.join("run.json")))
}

fn run(cmd: Cmd, common: &Common) -> Result<()> {
    let out = common.out.as_path();
    match cmd {
        Cmd::SynthRulers { n } => {
            let cfg = resolve(common, &[("rulers.n", opt(&n))])?;
            let scenes = synthesize_batch(cfg.u64("seed")?, cfg.usize("rulers.n")?, &cfg.synthesis_params()?)?;
            let masks = out.join("masks");
            fs::create_dir_all(&masks).map_err(io_at(&masks))?;
            for (i, s) in scenes.iter().enumerate() {
                s.mask.save_pgm(&masks.join(format!("scene_{i:05}.pgm")))?;
            }
            write_with(&out.join("manifest.csv"), |w| write_manifest(w, &scenes))
        }
        Cmd::Tpcf { masks } => {
            resolve(common, &[])?;
            let files = list_masks(&masks)?;
            let sigs = files
                .iter()
                .map(|(id, p)| Ok((id.clone(), signature(&BinaryMask::load_pgm(p)?)?)))
                .collect::<Result<Vec<_>>>()?;
            write_with(&out.join("signatures.csv"), |w| {
                let cols: Vec<String> = (0..SIGNATURE_BINS).map(|k| format!("s{k}")).collect();
                writeln!(w, "id,{}", cols.join(","))?;
                for (id, s) in &sigs {
                    let vals: Vec<String> = s.bins().iter().map(f64::to_string).collect();
                    writeln!(w, "{id},{}", vals.join(","))?;
                }
                Ok(())
            })
        }
        Cmd::TrainScale { manifest, signatures } => {
            let cfg = resolve(common, &[])?;
            let truth = read_manifest(&manifest)?;
            let sigs = read_signatures(&signatures)?;
            let items = sigs
                .into_iter()
                .map(|(id, s)| {
                    let row = id
                        .strip_prefix("scene_")
                        .and_then(|k| k.parse::<usize>().ok())
                        .and_then(|k| truth.iter().find(|r| r.scene_id == k))
                        .ok_or_else(|| Error::Config(format!("signature {id:?} has no manifest row")))?;
                    Ok((s, row.rho_true))
                })
                .collect::<Result<Vec<_>>>()?;
            let data = ScaleDataset::with_random_split(items, cfg.f64("scale.val_frac")?, 0.0, cfg.u64("seed")?)?;
            let model = Conv1dRegressor::new(RegressorHyper::default(), cfg.u64("seed")?)?;
            let trained = train(&model, &data, &cfg.scale_train_config()?)?;
            trained.model.to_checkpoint().save(&out.join("scale_model.gdsn"))?;
            write_with(&out.join("scale_history.csv"), |w| {
                writeln!(w, "epoch,train_mse,val_mse")?;
                for h in &trained.history {
                    writeln!(w, "{},{},{}", h.epoch, h.train_mse, h.val_mse.map_or(String::new(), |v| v.to_string()))?;
                }
                Ok(())
            })
        }
        Cmd::EstimateScale { signatures, model, method } => {
            let cfg = resolve(common, &[("scale.method", method)])?;
            let sigs = read_signatures(&signatures)?;
            let estimates: Vec<(String, f64)> = match cfg.get("scale.method") {
                "peak" => {
                    let dominance = cfg.f64("scale.peak_dominance")?;
                    sigs.iter().map(|(id, s)| Ok((id.clone(), peak_estimate_with(s, dominance)?))).collect::<Result<_>>()?
                }
                "cnn" => {
                    let path = model.ok_or_else(|| Error::Config("the cnn method needs --model".into()))?;
                    let m = Conv1dRegressor::from_checkpoint(&Checkpoint::load(&path)?)?;
                    sigs.iter().map(|(id, s)| Ok((id.clone(), m.forward(s, false)?))).collect::<Result<_>>()?
                }
                other => return Err(Error::Config(format!("scale.method: expected cnn or peak, found {other:?}"))),
            };
            write_with(&out.join("scales.csv"), |w| {
                writeln!(w, "id,rho_hat")?;
                estimates.iter().try_for_each(|(id, r)| writeln!(w, "{id},{r}"))
            })
        }
        Cmd::Geometry { masks, rho, scales } => {
            let cfg = resolve(common, &[])?;
            let params = cfg.geometry_params()?;
            let table = scales.as_deref().map(read_scales).transpose()?;
            let rows = list_masks(&masks)?
                .into_iter()
                .map(|(id, p)| {
                    let r = match (&table, rho) {
                        (_, Some(r)) => r,
                        (Some(t), None) => t
                            .iter()
                            .find(|(k, _)| *k == id)
                            .map(|(_, r)| *r)
                            .ok_or_else(|| Error::Config(format!("no scale for mask {id:?}")))?,
                        (None, None) => return Err(Error::Config("either --rho or --scales is required".into())),
                    };
                    Ok((id, describe_with(&BinaryMask::load_pgm(&p)?, r, &params)?))
                })
                .collect::<Result<Vec<_>>>()?;
            write_with(&out.join("geometry.csv"), |w| write_descriptors(w, &rows))
        }
        Cmd::SynthCohort { n } => {
            let cfg = resolve(common, &[("cohort.n", opt(&n))])?;
            let cohort = synth_cohort(&cfg.cohort_spec()?)?;
            let meta = out.join("metadata.csv");
            write_metadata(create(&meta)?, &cohort.records)?;
            save_features(&out.join("features.gdfm"), &cohort.features)
        }
        Cmd::BuildGraph { metadata, scheme, n, threshold } => {
            let cfg = resolve(common, &[("graph.scheme", scheme), ("graph.threshold", opt(&threshold))])?;
            let records = metadata.as_deref().map(metadata_only).transpose()?;
            let (graph, _) = scheme_graph(&cfg, records.as_ref(), n)?;
            graph.save_csv(&out.join("edges.csv"))
        }
        Cmd::SweepThresholds { files } => {
            let cfg = resolve(common, &[])?;
            let cohort = load_cohort(&files.metadata, &files.features)?;
            let cc = compare_config(&cfg)?;
            let labels = cohort.labels(cc.n_classes)?;
            let folds = stratified_folds(&labels, cc.k_folds, cc.seed)?;
            let full = build_full_weighted(&cohort, &CohortPrep::new(&cohort.records), &cc.edge)?;
            let mut rows = Vec::new();
            for &t in &cc.thresholds {
                let g = apply_threshold(&full, t);
                let cv = crossval_scheme(&Propagator::from_graph(&g), &cohort, &labels, &folds, &cc)?;
                let s = SchemeSummary::from_crossval("threshold", Some(t), Some(g.n_edges()), cv);
                rows.push(s.sweep_row());
                let path = out.join(format!("metrics_T{t}.json"));
                fs::write(&path, serde_json::to_string_pretty(&s).expect("serializable")).map_err(io_at(&path))?;
            }
            write_with(&out.join("sweep.csv"), |w| write_sweep_csv(w, &rows))
        }
        Cmd::TrainGcn { files, graph, scheme, threshold } => {
            let cfg = resolve(common, &[("graph.scheme", scheme), ("graph.threshold", opt(&threshold))])?;
            let cohort = load_cohort(&files.metadata, &files.features)?;
            let (g, t, name) = match graph {
                Some(p) => (PopulationGraph::load_csv(&p, cohort.len())?, None, "graph".to_string()),
                None => {
                    let (g, t) = scheme_graph(&cfg, Some(&cohort), None)?;
                    (g, t, cfg.get("graph.scheme").to_string())
                }
            };
            let info = RunInfo { scheme: name, threshold: t, edges: Some(g.n_edges()) };
            train_crossval(out, &cfg, &cohort, &Propagator::from_graph(&g), info)
        }
        Cmd::TrainAnn { files } => {
            let cfg = resolve(common, &[])?;
            let cohort = load_cohort(&files.metadata, &files.features)?;
            let info = RunInfo { scheme: "ann".into(), threshold: None, edges: None };
            train_crossval(out, &cfg, &cohort, &Propagator::Identity, info)
        }
        Cmd::Evaluate { probs, metadata } => {
            let cfg = resolve(common, &[])?;
            let records = lesiongraph::popgraph::read_metadata(&metadata)?;
            let n_classes = cfg.usize("cohort.classes")?;
            let labels = Cohort::new(records.clone(), Array2::zeros((records.len(), 0)))?.labels(n_classes)?;
            let (p, folds) = read_probs(&probs, &records, n_classes)?;
            let k = folds.iter().max().map_or(0, |m| m + 1);
            let cv = crossval(&labels, &folds, k, &cfg.eval_config()?, |_| Ok(p.clone()))?;
            let info_path = probs.with_file_name("run.json");
            let info: RunInfo = match fs::read_to_string(&info_path) {
                Ok(s) => serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", info_path.display())))?,
                Err(_) => RunInfo { scheme: "unknown".into(), threshold: None, edges: None },
            };
            let s = SchemeSummary::from_crossval(&info.scheme, info.threshold, info.edges, cv);
            let path = out.join("metrics.json");
            fs::write(&path, serde_json::to_string_pretty(&s).expect("serializable")).map_err(io_at(&path))
        }
        Cmd::Report { metrics, metadata, features } => {
            let cfg = resolve(common, &[])?;
            let rows = if let (Some(m), Some(f)) = (metadata, features) {
                let cmp = compare_schemes(&load_cohort(&m, &f)?, &compare_config(&cfg)?)?;
                let sweep: Vec<_> = cmp.sweep.iter().map(SchemeSummary::sweep_row).collect();
                write_with(&out.join("sweep.csv"), |w| write_sweep_csv(w, &sweep))?;
                cmp.report_rows()
            } else if !metrics.is_empty() {
                metrics
                    .iter()
                    .map(|p| {
                        let s = fs::read_to_string(p).map_err(io_at(p))?;
                        serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
                    })
                    .collect::<Result<Vec<SchemeSummary>>>()?
            } else {
                return Err(Error::Config("report needs --metrics or --metadata with --features".into()));
            };
            write_with(&out.join("report.csv"), |w| write_report(w, &rows))
        }
    }
}

/// Out-of-fold probabilities aligned with the metadata rows.
fn read_probs(path: &Path, records: &[lesiongraph::popgraph::NodeRecord], n_classes: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut p = Array2::zeros((records.len(), n_classes));
    let mut folds = Vec::with_capacity(records.len());
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |msg: &str| Error::Format { path: path.into(), line, msg: msg.into() };
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        if rec.len() != n_classes + 2 {
            return Err(bad(&format!("expected {} fields, found {}", n_classes + 2, rec.len())));
        }
        if i >= records.len() || rec[0] != records[i].id {
            return Err(bad("row order does not match the metadata"));
        }
        folds.push(rec[1].parse().map_err(|_| bad("unparsable fold"))?);
        for k in 0..n_classes {
            p[[i, k]] = rec[k + 2].parse().map_err(|_| bad("unparsable probability"))?;
        }
        n += 1;
    }
    if n != records.len() {
        return Err(Error::Config(format!("{}: {n} rows for {} nodes", path.display(), records.len())));
    }
    Ok((p, folds))
}

