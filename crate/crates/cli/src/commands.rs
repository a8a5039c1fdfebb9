use std::path::{Path, PathBuf};

use log::{info, warn};
use pcae::analysis::{estimate_dim_cumvar_ordered, interpolate as lerp, latent_variances, write_variance_csv, DimEstimate};
use pcae::datasets::{gen_flat_strip, metadata_path, split, Dataset, SplitSpec};
use pcae::geodesic::{build_index, GeodesicIndex};
use pcae::linalg::Matrix;
use pcae::network::MlpModel;
use pcae::theory::{solve_stiefel, StiefelProblem, Theorem1Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{read_dataset, require_file, RunConfig};
use crate::{
    CliError, Common, EstimateArgs, GenDataArgs, GeodesicArgs, InterpolateArgs, SmoothnessArgs, Theorem1Args,
    Theorem2Args, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Pretty JSON to `out`, or to stdout.
fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    ds.write_csv(path)?;
    ds.write_metadata(&metadata_path(path))?;
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let d = &mut cfg.dataset;
    if let Some(g) = a.generator {
        d.generator = g;
    }
    if let Some(v) = a.n {
        d.n = v;
    }
    if let Some(v) = a.d_true {
        d.d_true = v;
    }
    if let Some(v) = a.p {
        d.p = v;
    }
    if let Some(v) = a.variances {
        d.variances = Some(v);
    }
    if let Some(v) = a.noise_sd {
        d.noise_sd = v;
    }
    if let Some(v) = a.height {
        d.height = v;
    }
    if let Some(v) = a.ambient {
        d.ambient = v;
    }
    let cfg = cfg.finish()?;
    let ds = cfg.dataset.build(cfg.seed)?;
    write_dataset(&ds, &a.out)?;
    let mut parts = Vec::new();
    if a.split {
        let (tr, va, te) = split(&ds, &SplitSpec::default(), cfg.seed)?;
        for (name, part) in [("train", tr), ("val", va), ("test", te)] {
            let path = a.out.with_extension(format!("{name}.csv"));
            write_dataset(&part, &path)?;
            parts.push(json!({ "part": name, "path": path, "n": part.len() }));
        }
    }
    info!("wrote {} samples of dimension {} to {}", ds.len(), ds.dim(), a.out.display());
    emit(
        &json!({
            "command": "gen-data",
            "config_hash": cfg.hash(),
            "path": a.out,
            "generator": ds.generator,
            "n": ds.len(),
            "dim": ds.dim(),
            "intrinsic_dim": ds.intrinsic_dim,
            "splits": parts,
        }),
        None,
    )
}

pub fn build_geodesic(a: GeodesicArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(k) = a.k {
        cfg.k_neighbors = k;
    }
    if let Some(l) = a.landmarks {
        cfg.landmark_count = l;
    }
    let cfg = cfg.finish()?;
    let ds = read_dataset(&a.data)?;
    let mut landmarks = cfg.landmark_count;
    if landmarks > ds.len() {
        warn!("{landmarks} landmarks requested for {} samples; using every sample", ds.len());
        landmarks = ds.len();
    }
    let index = build_index(&ds.samples, cfg.k_neighbors, landmarks, cfg.seed)?;
    index.save(&a.out)?;
    info!(
        "geodesic index: {} landmarks{}, {} repair edges, covering radius {:.4}",
        index.landmark_count(),
        if index.is_exact() { " (exact)" } else { "" },
        index.repair_count,
        index.covering_radius
    );
    emit(
        &json!({
            "command": "build-geodesic",
            "config_hash": cfg.hash(),
            "path": a.out,
            "n": index.len(),
            "k": index.k,
            "landmarks": index.landmark_count(),
            "exact": index.is_exact(),
            "repair_count": index.repair_count,
            "covering_radius": index.covering_radius,
        }),
        None,
    )
}

fn report_path(a: &TrainArgs) -> PathBuf {
    a.report.clone().unwrap_or_else(|| a.out.with_extension("report.json"))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let t = &mut cfg.train;
    if let Some(v) = a.hidden.clone() {
        t.hidden = v;
    }
    if let Some(v) = a.latent_dim {
        t.latent_dim = v;
    }
    if let Some(v) = a.beta {
        t.beta = v;
    }
    if let Some(v) = a.iso_variant {
        t.iso_variant = v.into();
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.threshold {
        t.threshold = v;
    }
    if let Some(v) = a.period {
        t.update_period = v;
    }
    if let Some(v) = a.schedule {
        t.schedule_mode = v.into();
    }
    if let Some(v) = a.pair_rounds {
        t.pair_rounds = v;
    }
    if !a.taus.is_empty() {
        t.taus = a.taus.clone();
    }
    if let Some(v) = a.loss {
        t.loss = v.into();
    }
    if let Some(v) = a.ablate {
        t.ablation = v.into();
    }
    if let Some(v) = a.order {
        t.cumvar_order = v.into();
    }
    let cfg = cfg.finish()?;
    let ds = read_dataset(&a.data)?;
    let needs_index = cfg.train.loss == pcae::train::LossKind::Pcae && cfg.train.ablation.terms().iso;
    let index = match (&a.geo, needs_index) {
        (Some(p), true) => {
            require_file(p, "geodesic index")?;
            Some(GeodesicIndex::load(p)?)
        }
        (None, true) => return Err(CliError::Config("the isometry term needs --geo".into())),
        (_, false) => None,
    };
    let out = pcae::train::train(&cfg.train, &ds.samples, index.as_ref())?;
    let epochs_done = out.report.epochs.len();
    out.model.save(&a.out, epochs_done)?;
    if let Some(p) = &a.variances_csv {
        write_variance_csv(p, &out.report.final_variances)?;
    }
    let report = report_path(&a);
    emit(
        &json!({
            "command": "train",
            "config_hash": cfg.hash(),
            "config": cfg,
            "checkpoint": a.out,
            "report": out.report,
        }),
        Some(&report),
    )?;
    for e in &out.report.dim_estimates {
        info!("tau {}: k = {}", e.tau, e.k);
    }
    info!(
        "{epochs_done} epochs, {:.3} s/epoch; checkpoint {}, report {}",
        out.report.mean_seconds_per_epoch(),
        a.out.display(),
        report.display()
    );
    match out.report.stopped_early {
        Some(reason) => Err(CliError::Numerical(format!("{reason}; last good checkpoint written to {}", a.out.display()))),
        None => Ok(()),
    }
}

fn load_model_and_data(checkpoint: &Path, data: &Path) -> Result<(MlpModel, Dataset)> {
    require_file(checkpoint, "checkpoint")?;
    let (model, _) = MlpModel::load(checkpoint)?;
    let ds = read_dataset(data)?;
    if ds.dim() != model.input_dim() {
        return Err(CliError::Config(format!(
            "dataset has dimension {}, checkpoint expects {}",
            ds.dim(),
            model.input_dim()
        )));
    }
    Ok((model, ds))
}

pub fn estimate_dim(a: EstimateArgs) -> Result<()> {
    let cfg = load_config(&a.common)?.finish()?;
    let (model, ds) = load_model_and_data(&a.checkpoint, &a.data)?;
    let taus = if a.taus.is_empty() { cfg.train.taus.clone() } else { a.taus.clone() };
    let order = a.order.map_or(cfg.train.cumvar_order, Into::into);
    let vars = latent_variances(&model, &ds.samples)?;
    let estimates: Vec<DimEstimate> =
        taus.iter().map(|&t| estimate_dim_cumvar_ordered(&vars, t, order)).collect::<pcae::Result<_>>()?;
    emit(
        &json!({
            "command": "estimate-dim",
            "config_hash": cfg.hash(),
            "checkpoint": a.checkpoint,
            "variances": vars,
            "estimates": estimates,
        }),
        a.out.as_deref(),
    )
}

pub fn smoothness(a: SmoothnessArgs) -> Result<()> {
    let cfg = load_config(&a.common)?.finish()?;
    let (model, ds) = load_model_and_data(&a.checkpoint, &a.data)?;
    let rep = pcae::analysis::smoothness(&model, &ds.samples, a.pairs, a.steps, cfg.seed)?;
    info!("smoothness {:.6e} over {} pairs", rep.score, rep.pair_count);
    emit(
        &json!({ "command": "smoothness", "config_hash": cfg.hash(), "checkpoint": a.checkpoint, "result": rep }),
        a.out.as_deref(),
    )
}

pub fn interpolate(a: InterpolateArgs) -> Result<()> {
    let cfg = load_config(&a.common)?.finish()?;
    let (model, ds) = load_model_and_data(&a.checkpoint, &a.data)?;
    for idx in [a.from, a.to] {
        if idx >= ds.len() {
            return Err(CliError::Config(format!("sample {idx} out of range for {} samples", ds.len())));
        }
    }
    let ends = model.encode(&ds.samples.select_columns(&[a.from, a.to]))?;
    let path = lerp(&ends.column(0), &ends.column(1), a.steps)?;
    let decoded = model.decode(&Matrix::from_columns(&path)?)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::Config(e.to_string()))?;
    let header: Vec<String> =
        ["step".to_string(), "t".to_string()].into_iter().chain((1..=decoded.rows()).map(|i| format!("x{i}"))).collect();
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for s in 0..=a.steps {
        let row: Vec<String> = [s.to_string(), (s as f64 / a.steps as f64).to_string()]
            .into_iter()
            .chain(decoded.column(s).iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    emit(
        &json!({
            "command": "interpolate",
            "config_hash": cfg.hash(),
            "path": a.out,
            "from": a.from,
            "to": a.to,
            "steps": a.steps,
        }),
        None,
    )
}

fn random_weights(p: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..2.0)).collect();
        g.sort_by(f64::total_cmp);
        if g[0] > 0.0 && g.windows(2).all(|w| w[0] < w[1]) {
            return g;
        }
    }
}

pub fn verify_theorem1(a: Theorem1Args) -> Result<()> {
    let cfg = load_config(&a.common)?.finish()?;
    if a.p == 0 || a.instances == 0 {
        return Err(CliError::Config("p and instances must be positive".into()));
    }
    let mut reports: Vec<Theorem1Report> = Vec::with_capacity(a.instances);
    for i in 0..a.instances as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i));
        let m = Matrix::random_normal(a.p, a.p, &mut rng);
        let sigma = m.matmul_t(&m)?;
        let gammas = a.gammas.clone().unwrap_or_else(|| random_weights(a.p, &mut rng));
        let mut problem = StiefelProblem::new(sigma, gammas)?;
        problem.max_iters = a.max_iters;
        reports.push(solve_stiefel(&problem, cfg.seed.wrapping_add(i))?);
    }
    let max_gap = reports.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    let min_alignment = reports.iter().map(Theorem1Report::min_alignment).fold(1.0, f64::min);
    let pass = max_gap < a.gap_tol && min_alignment >= a.align_tol;
    emit(
        &json!({
            "command": "verify theorem1",
            "config_hash": cfg.hash(),
            "p": a.p,
            "gap_tol": a.gap_tol,
            "align_tol": a.align_tol,
            "max_gap": max_gap,
            "min_alignment": min_alignment,
            "pass": pass,
            "instances": reports,
        }),
        a.out.as_deref(),
    )?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("max gap {max_gap:e}, min alignment {min_alignment}")))
    }
}

pub fn verify_theorem2(a: Theorem2Args) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.theorem2.epochs = e;
    }
    if let Some(t) = a.target {
        cfg.theorem2.target = t.into();
    }
    let cfg = cfg.finish()?;
    let ds = match &a.data {
        Some(p) => read_dataset(p)?,
        None => gen_flat_strip(a.n, a.height, cfg.seed)?,
    };
    let rep = pcae::theory::verify_theorem2(&ds, &a.gammas, &cfg.theorem2)?;
    let pass = rep.within(a.mean_tol, a.p95_tol);
    info!("mean relative error {:.4}, p95 {:.4}", rep.mean_rel_error, rep.p95_rel_error);
    emit(
        &json!({
            "command": "verify theorem2",
            "config_hash": cfg.hash(),
            "mean_tol": a.mean_tol,
            "p95_tol": a.p95_tol,
            "pass": pass,
            "result": rep,
        }),
        a.out.as_deref(),
    )?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "mean {:.4} (tol {}), p95 {:.4} (tol {})",
            rep.mean_rel_error, a.mean_tol, rep.p95_rel_error, a.p95_tol
        )))
    }
}
