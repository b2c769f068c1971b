//! Stage implementations behind the subcommands. Every stage reads and
//! writes one directory under the workspace, records a provenance
//! manifest there, and is byte-identical on re-runs with equal inputs
//! and seeds.

use hstgcn::config::RunConfig;
use hstgcn::eval::{
    build_report, classify_slices, ha_baseline, evaluate_runs, ReportRow, SliceKind, VariantRun,
};
use hstgcn::features::{aggregate_routes, ha_table, FeatureSource, HaDivisor, VolumeCube};
use hstgcn::grid::TimeGrid;
use hstgcn::io::{
    read_f64_blob, read_navlog, read_network, read_series, sha256_hex, write_f64_blob,
    StageManifest,
};
use hstgcn::model::Variant;
use hstgcn::network::RoadNetwork;
use hstgcn::sim::{emit_dataset, run_scenario, SimMode, NAVLOG_FILE, NETWORK_FILE, TRAVELTIME_FILE};
use hstgcn::spectral::{build_adjacency, scaled_laplacian, SpectralOperator};
use hstgcn::tensor::Tensor;
use hstgcn::train::{
    adjacency_fingerprint, fit, load_checkpoint, save_checkpoint, split_anchors, Checkpoint,
};
use hstgcn::{seed, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const DATASET_DIR: &str = "dataset";
pub const FEATURES_DIR: &str = "features";
pub const EVAL_DIR: &str = "eval";
const CONFIG_FILE: &str = "config.toml";
const STORE_FILE: &str = "store.json";
const CUBE_FILE: &str = "cube.bin";
const HA_VOLUME_FILE: &str = "ha_volume.bin";
const HA_TIME_FILE: &str = "ha_time.bin";
const NORMALIZER_FILE: &str = "normalizer.json";
const TRACE_FILE: &str = "trace.json";

pub fn train_dir_name(variant: Variant) -> String {
    format!("train-{variant}")
}

/// Create (or, with `force`, wipe and recreate) a stage's output
/// directory. Refusing to touch a non-empty directory keeps accidental
/// re-runs from silently mixing artifacts of different runs.
fn prepare_stage_dir(workspace: &Path, name: &str, force: bool) -> Result<PathBuf> {
    let dir = workspace.join(name);
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        if !force {
            return Err(Error::Config(format!(
                "{} already contains files; pass --force to replace them",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn stage_inputs_dir(workspace: &Path, name: &str, needed_by: &str) -> Result<PathBuf> {
    let dir = workspace.join(name);
    if !dir.join("manifest.json").exists() {
        return Err(Error::Data(format!(
            "{} has no {name} manifest; run `hstgcn {needed_by}` first",
            workspace.display()
        )));
    }
    Ok(dir)
}

fn config_hash(config: &RunConfig) -> String {
    sha256_hex(config.to_document().as_bytes())
}

// ---- simulate ---------------------------------------------------------

pub fn cmd_simulate(config: &RunConfig, workspace: &Path, force: bool) -> Result<()> {
    let dir = prepare_stage_dir(workspace, DATASET_DIR, force)?;
    let grid = config.scenario.grid()?;
    let sc = &config.scenario;
    let (net, demand, out) = run_scenario(
        sc.network,
        sc.segments,
        &grid,
        &sc.fd,
        sc.demand_scale,
        sc.p_nav,
        SimMode::Live,
        config.seed,
    )?;
    emit_dataset(&net, &out, &dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_document())?;

    let mut manifest = StageManifest::new("simulate", config.seed, config_hash(config));
    for name in [NETWORK_FILE, TRAVELTIME_FILE, NAVLOG_FILE, CONFIG_FILE] {
        manifest.record_file(&dir, name)?;
    }
    let stats = &out.stats;
    manifest.extra = BTreeMap::from([
        ("segments".into(), net.n_segments().to_string()),
        ("slots".into(), grid.total_slots().to_string()),
        ("surges".into(), demand.surges.len().to_string()),
        ("spawned".into(), stats.spawned.to_string()),
        ("logged_routes".into(), stats.logged_routes.to_string()),
    ]);
    manifest.write(&dir)?;
    println!(
        "dataset: {} segments x {} slots ({} train + {} test weeks), \
         {} vehicles, {} logged routes, {} surges -> {}",
        net.n_segments(),
        grid.total_slots(),
        grid.weeks_train,
        grid.weeks_test,
        stats.spawned,
        stats.logged_routes,
        demand.surges.len(),
        dir.display()
    );
    Ok(())
}

// ---- feature store ----------------------------------------------------

/// Plain-text header of the persisted feature store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub n: usize,
    pub slots: usize,
    /// Input window length P.
    pub past_slots: usize,
    /// Forecast horizons F.
    pub horizons: usize,
    /// Channels of the volume input tensor: 2(F+1).
    pub v_channels: usize,
    /// Channels of the travel-time input tensor: F+2.
    pub t_channels: usize,
    pub ha_divisor: HaDivisor,
    pub slot_minutes: usize,
    pub weeks_train: usize,
    pub weeks_test: usize,
    /// Logged hops that entered the volume cube.
    pub counted_hops: usize,
    /// Logged hops whose planned ETA fell outside the grid.
    pub skipped_hops: usize,
}

pub fn cmd_features(config: &RunConfig, workspace: &Path, force: bool) -> Result<()> {
    let dataset_dir = stage_inputs_dir(workspace, DATASET_DIR, "simulate")?;
    let dataset_manifest = StageManifest::read(&dataset_dir)?;
    dataset_manifest.verify(&dataset_dir)?;
    let net = read_network(&dataset_dir.join(NETWORK_FILE))?;
    let tau = read_series(&dataset_dir.join(TRAVELTIME_FILE))?;
    let log = read_navlog(&dataset_dir.join(NAVLOG_FILE))?;

    let grid = config.scenario.grid()?;
    let n = net.n_segments();
    if tau.shape() != [n, grid.total_slots()] {
        return Err(Error::Data(format!(
            "dataset grid mismatch: travel-time table is {:?}, config implies [{n}, {}]",
            tau.shape(),
            grid.total_slots()
        )));
    }
    let p = config.features.past_slots;
    let f = config.features.horizon_slots;

    let dir = prepare_stage_dir(workspace, FEATURES_DIR, force)?;
    let (cube, diag) = aggregate_routes(&log, &grid, n, f)?;
    // conservation: every logged hop is either counted (contributing
    // exactly one entry to the f = 0 plane) or skipped
    let total_hops: usize = log.records.iter().map(|r| r.hops.len()).sum();
    if diag.counted_hops + diag.skipped_hops != total_hops {
        return Err(Error::Data(format!(
            "hop conservation violated: {} counted + {} skipped != {} logged",
            diag.counted_hops, diag.skipped_hops, total_hops
        )));
    }
    let current = cube.current_volume();
    let current_total = current.data().iter().sum::<f64>().round() as usize;
    if current_total != diag.counted_hops {
        return Err(Error::Data(format!(
            "volume conservation violated: cube current-slot total {} != {} counted hops",
            current_total, diag.counted_hops
        )));
    }

    let ha_volume = ha_table(&current, &grid, config.features.ha_divisor)?;
    let ha_time = ha_table(&tau, &grid, config.features.ha_divisor)?;
    let source = FeatureSource {
        cube,
        travel_time: tau,
        ha_volume,
        ha_time,
        grid: grid.clone(),
    };
    let (train_anchors, _, _) = split_anchors(&grid, p, f);
    let normalizer = source.fit_normalizer(&train_anchors, p, f)?;

    let header = StoreHeader {
        n,
        slots: grid.total_slots(),
        past_slots: p,
        horizons: f,
        v_channels: 2 * (f + 1),
        t_channels: f + 2,
        ha_divisor: config.features.ha_divisor,
        slot_minutes: grid.slot_minutes,
        weeks_train: grid.weeks_train,
        weeks_test: grid.weeks_test,
        counted_hops: diag.counted_hops,
        skipped_hops: diag.skipped_hops,
    };
    write_f64_blob(&dir.join(CUBE_FILE), source.cube.nu.data())?;
    write_f64_blob(&dir.join(HA_VOLUME_FILE), source.ha_volume.data())?;
    write_f64_blob(&dir.join(HA_TIME_FILE), source.ha_time.data())?;
    write_json(&dir.join(NORMALIZER_FILE), &normalizer)?;
    write_json(&dir.join(STORE_FILE), &header)?;

    let mut manifest = StageManifest::new("features", config.seed, config_hash(config));
    manifest.input_manifest_sha256 = Some(StageManifest::file_hash(&dataset_dir)?);
    for name in [CUBE_FILE, HA_VOLUME_FILE, HA_TIME_FILE, NORMALIZER_FILE, STORE_FILE] {
        manifest.record_file(&dir, name)?;
    }
    manifest.write(&dir)?;
    println!(
        "features: volume cube {}x{}x{} ({}/{} input channels), \
         {} hops counted, {} planned ETAs outside the grid -> {}",
        n,
        grid.total_slots(),
        f + 1,
        header.v_channels,
        header.t_channels,
        diag.counted_hops,
        diag.skipped_hops,
        dir.display()
    );
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    fs::write(path, body + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// The persisted feature store plus the dataset it was built from.
pub struct LoadedFeatures {
    pub header: StoreHeader,
    pub source: FeatureSource,
    pub net: RoadNetwork,
    pub features_dir: PathBuf,
}

fn load_features(workspace: &Path) -> Result<LoadedFeatures> {
    let dataset_dir = stage_inputs_dir(workspace, DATASET_DIR, "simulate")?;
    let features_dir = stage_inputs_dir(workspace, FEATURES_DIR, "features")?;
    let header: StoreHeader = read_json(&features_dir.join(STORE_FILE))?;
    let grid = TimeGrid::new(header.slot_minutes, header.weeks_train, header.weeks_test)?;
    if grid.total_slots() != header.slots {
        return Err(Error::Data(format!(
            "feature store header is inconsistent: {} slots vs {} from its own grid",
            header.slots,
            grid.total_slots()
        )));
    }
    let net = read_network(&dataset_dir.join(NETWORK_FILE))?;
    if net.n_segments() != header.n {
        return Err(Error::Data(format!(
            "feature store was built for {} segments, dataset has {}",
            header.n,
            net.n_segments()
        )));
    }
    let tau = read_series(&dataset_dir.join(TRAVELTIME_FILE))?;
    let nu = Tensor::new(
        vec![header.n, header.slots, header.horizons + 1],
        read_f64_blob(&features_dir.join(CUBE_FILE))?,
    )?;
    let ha_volume = Tensor::new(
        vec![header.n, header.slots],
        read_f64_blob(&features_dir.join(HA_VOLUME_FILE))?,
    )?;
    let ha_time = Tensor::new(
        vec![header.n, header.slots],
        read_f64_blob(&features_dir.join(HA_TIME_FILE))?,
    )?;
    if tau.shape() != [header.n, header.slots] {
        return Err(Error::Data(format!(
            "dataset travel-time table is {:?}, feature store expects [{}, {}]",
            tau.shape(),
            header.n,
            header.slots
        )));
    }
    let source = FeatureSource {
        cube: VolumeCube { nu, horizons: header.horizons },
        travel_time: tau,
        ha_volume,
        ha_time,
        grid,
    };
    Ok(LoadedFeatures { header, source, net, features_dir })
}

// ---- train ------------------------------------------------------------

/// Materialize the training-span slice of an n×S series.
fn train_span(series: &Tensor, s_train: usize) -> Result<Tensor> {
    let &[n, s_total] = series.shape() else {
        return Err(Error::Shape(format!("series must be n×S, got {:?}", series.shape())));
    };
    let mut data = Vec::with_capacity(n * s_train);
    for i in 0..n {
        data.extend_from_slice(&series.data()[i * s_total..i * s_total + s_train]);
    }
    Tensor::new(vec![n, s_train], data)
}

/// Adjacency and spectral operator for one variant on the current
/// dataset: compound (covariance ⊙ distance-decay) for every variant but
/// the plain-STGCN one, which uses the distance-decay matrix alone.
fn variant_operator(
    config: &RunConfig,
    net: &RoadNetwork,
    tau: &Tensor,
    grid: &TimeGrid,
    variant: Variant,
    chebyshev_order: usize,
) -> Result<(Tensor, SpectralOperator)> {
    let train_tau = train_span(tau, grid.s_train())?;
    let adj = build_adjacency(net, &train_tau, config.model.sigma2, config.model.epsilon)?;
    let w = if variant.uses_compound_adjacency() { adj.compound } else { adj.dijkstra };
    let spec = scaled_laplacian(&w, chebyshev_order)?;
    Ok((w, spec))
}

pub fn cmd_train(
    config: &RunConfig,
    workspace: &Path,
    variant: Option<Variant>,
    force: bool,
) -> Result<()> {
    let variant = variant.unwrap_or(config.model.variant);
    let loaded = load_features(workspace)?;
    let p = config.features.past_slots;
    let f = config.features.horizon_slots;
    if loaded.header.past_slots != p || loaded.header.horizons != f {
        return Err(Error::Data(format!(
            "feature store windows are P = {}, F = {}; config wants P = {p}, F = {f} \
             (rebuild the feature store)",
            loaded.header.past_slots, loaded.header.horizons
        )));
    }
    let dir = prepare_stage_dir(workspace, &train_dir_name(variant), force)?;

    let grid = loaded.source.grid.clone();
    let (w, spec) = variant_operator(
        config,
        &loaded.net,
        &loaded.source.travel_time,
        &grid,
        variant,
        config.model.chebyshev_order,
    )?;
    let arch = config.architecture(variant, loaded.header.n);
    let mut model = hstgcn::model::Model::build(
        &arch,
        &spec,
        seed::derive(config.seed, &format!("init-{variant}")),
    )?;
    let (train_anchors, val_anchors, _) = split_anchors(&grid, p, f);
    let train_config =
        config.train.to_train_config(seed::derive(config.seed, &format!("train-{variant}")));
    let (trace, normalizer) = fit(&mut model, &loaded.source, &train_anchors, &val_anchors, &train_config)?;
    save_checkpoint(&dir, &model, &normalizer, &adjacency_fingerprint(&w))?;
    write_json(&dir.join(TRACE_FILE), &trace)?;

    let mut manifest = StageManifest::new("train", config.seed, config_hash(config));
    manifest.input_manifest_sha256 = Some(StageManifest::file_hash(&loaded.features_dir)?);
    for name in ["checkpoint.json", "params.bin", TRACE_FILE] {
        manifest.record_file(&dir, name)?;
    }
    manifest.extra = BTreeMap::from([
        ("variant".into(), variant.to_string()),
        ("best_epoch".into(), trace.best_epoch.to_string()),
        ("best_val_loss".into(), format!("{:.6e}", trace.best_val_loss)),
    ]);
    manifest.write(&dir)?;
    println!(
        "train {variant}: {} epochs, best epoch {} (val loss {:.4e}){} -> {}",
        trace.epochs.len(),
        trace.best_epoch,
        trace.best_val_loss,
        if trace.stopped_early { ", stopped early" } else { "" },
        dir.display()
    );
    Ok(())
}

// ---- eval -------------------------------------------------------------

/// Which slices to keep in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSelection {
    All,
    One(SliceKind),
}

impl std::str::FromStr for SliceSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(SliceSelection::All)
        } else {
            Ok(SliceSelection::One(s.parse()?))
        }
    }
}

impl SliceSelection {
    fn keeps(&self, kind: SliceKind) -> bool {
        match self {
            SliceSelection::All => true,
            SliceSelection::One(k) => *k == kind,
        }
    }
}

pub fn cmd_eval(
    config: &RunConfig,
    workspace: &Path,
    slice: SliceSelection,
    force: bool,
) -> Result<()> {
    let loaded = load_features(workspace)?;
    let grid = loaded.source.grid.clone();
    let p = loaded.header.past_slots;
    let f = loaded.header.horizons;
    let (_, _, test_anchors) = split_anchors(&grid, p, f);
    if test_anchors.is_empty() {
        return Err(Error::Eval("the grid leaves no test anchors".into()));
    }
    let masks = classify_slices(
        &loaded.source.travel_time,
        &loaded.source.ha_time,
        &loaded.source.cube.current_volume(),
        &loaded.net,
        &grid,
        &config.eval,
    )?;

    let mut runs = Vec::new();
    let mut checkpoint_hashes = BTreeMap::new();
    for variant in Variant::ALL {
        let train_dir = workspace.join(train_dir_name(variant));
        if !train_dir.join("checkpoint.json").exists() {
            continue;
        }
        let checkpoint = load_checkpoint(&train_dir)?;
        let preds = predict_run(config, &loaded, &checkpoint, variant, &test_anchors)?;
        runs.push(VariantRun { name: variant.to_string(), preds });
        if train_dir.join("manifest.json").exists() {
            checkpoint_hashes.insert(
                format!("checkpoint-{variant}"),
                StageManifest::file_hash(&train_dir)?,
            );
        }
    }
    if runs.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no trained checkpoints; run `hstgcn train` first",
            workspace.display()
        )));
    }
    runs.push(VariantRun {
        name: "ha".into(),
        preds: ha_baseline(&loaded.source.ha_time, &test_anchors, f)?,
    });

    let dir = prepare_stage_dir(workspace, EVAL_DIR, force)?;
    let rows = evaluate_runs(&runs, &test_anchors, &loaded.source.travel_time, &masks, f)?;
    let rows: Vec<ReportRow> = rows.into_iter().filter(|r| slice.keeps(r.slice)).collect();
    build_report(&rows, &dir)?;

    let mut manifest = StageManifest::new("eval", config.seed, config_hash(config));
    manifest.input_manifest_sha256 = Some(StageManifest::file_hash(&loaded.features_dir)?);
    for name in ["report.csv", "report.svg"] {
        manifest.record_file(&dir, name)?;
    }
    manifest.extra = checkpoint_hashes;
    manifest.extra.insert("anchors".into(), test_anchors.len().to_string());
    manifest.write(&dir)?;

    for run in &runs {
        let pooled: Vec<String> = SliceKind::ALL
            .iter()
            .filter(|k| slice.keeps(**k))
            .filter_map(|k| {
                rows.iter()
                    .find(|r| {
                        r.variant == run.name
                            && r.slice == *k
                            && r.horizon.is_none()
                            && r.metric == "mae"
                    })
                    .map(|r| format!("{k} {:.4e}", r.value))
            })
            .collect();
        println!("eval {}: mae {}", run.name, pooled.join(", "));
    }
    println!("report -> {}", dir.join("report.csv").display());
    Ok(())
}

/// Forward one checkpoint over the anchor list. Rebuilds the variant's
/// adjacency from the current dataset and warns when it no longer
/// matches the one the checkpoint was trained on.
fn predict_run(
    config: &RunConfig,
    loaded: &LoadedFeatures,
    checkpoint: &Checkpoint,
    variant: Variant,
    anchors: &[usize],
) -> Result<Vec<Tensor>> {
    let arch = &checkpoint.architecture;
    if arch.p != loaded.header.past_slots || arch.f_horizon != loaded.header.horizons {
        return Err(Error::Checkpoint(format!(
            "checkpoint {variant} expects windows P = {}, F = {}; the feature store holds \
             P = {}, F = {}",
            arch.p, arch.f_horizon, loaded.header.past_slots, loaded.header.horizons
        )));
    }
    let (w, spec) = variant_operator(
        config,
        &loaded.net,
        &loaded.source.travel_time,
        &loaded.source.grid,
        variant,
        arch.chebyshev_order,
    )?;
    if adjacency_fingerprint(&w) != checkpoint.adjacency_sha256 {
        eprintln!(
            "warning: adjacency for {variant} differs from the one the checkpoint was \
             trained on; evaluating anyway"
        );
    }
    let normalizer = checkpoint.normalizer.clone();
    let model = checkpoint.clone().into_model(&spec)?;
    let p = arch.p;
    let f = arch.f_horizon;
    let mut preds = Vec::with_capacity(anchors.len());
    for &t0 in anchors {
        let window = loaded.source.window(t0, p, f)?;
        let t = normalizer.apply(&window.t)?;
        preds.push(model.predict(&window.v, &t)?);
    }
    Ok(preds)
}

// ---- report -----------------------------------------------------------

/// Audit the manifest chain (report → checkpoints → features → dataset)
/// and print the merged report as a table.
pub fn cmd_report(workspace: &Path, slice: SliceSelection) -> Result<()> {
    let eval_dir = stage_inputs_dir(workspace, EVAL_DIR, "eval")?;
    let features_dir = stage_inputs_dir(workspace, FEATURES_DIR, "features")?;
    let dataset_dir = stage_inputs_dir(workspace, DATASET_DIR, "simulate")?;

    let eval_manifest = StageManifest::read(&eval_dir)?;
    eval_manifest.verify(&eval_dir)?;
    let features_manifest = StageManifest::read(&features_dir)?;
    features_manifest.verify(&features_dir)?;
    let dataset_manifest = StageManifest::read(&dataset_dir)?;
    dataset_manifest.verify(&dataset_dir)?;

    let mut audited = vec!["eval".to_string(), "features".into(), "dataset".into()];
    if eval_manifest.input_manifest_sha256.as_deref()
        != Some(StageManifest::file_hash(&features_dir)?.as_str())
    {
        return Err(Error::Data(
            "eval was produced from a different feature store than the one present".into(),
        ));
    }
    if features_manifest.input_manifest_sha256.as_deref()
        != Some(StageManifest::file_hash(&dataset_dir)?.as_str())
    {
        return Err(Error::Data(
            "the feature store was built from a different dataset than the one present".into(),
        ));
    }
    for (key, expect) in eval_manifest.extra.iter().filter(|(k, _)| k.starts_with("checkpoint-")) {
        let variant = &key["checkpoint-".len()..];
        let train_dir = workspace.join(format!("train-{variant}"));
        let got = StageManifest::file_hash(&train_dir)?;
        if &got != expect {
            return Err(Error::Data(format!(
                "checkpoint {variant} changed since the report was produced"
            )));
        }
        StageManifest::read(&train_dir)?.verify(&train_dir)?;
        audited.push(format!("train-{variant}"));
    }
    let mut config_hashes: Vec<&str> = [&eval_manifest, &features_manifest, &dataset_manifest]
        .iter()
        .map(|m| m.config_sha256.as_str())
        .collect();
    config_hashes.dedup();
    if config_hashes.len() > 1 {
        eprintln!("warning: stages were produced with differing configs");
    }
    println!(
        "provenance verified: {} (seed {})",
        audited.join(" <- "),
        dataset_manifest.seed
    );

    let csv = fs::read_to_string(eval_dir.join("report.csv"))?;
    print_report_table(&csv, slice)
}

/// Render the pooled (`horizon = all`) rows of the tidy CSV as one table
/// per slice.
fn print_report_table(csv: &str, slice: SliceSelection) -> Result<()> {
    struct Row {
        slice: SliceKind,
        variant: String,
        metric: String,
        value: f64,
        count: usize,
    }
    let mut rows = Vec::new();
    for (idx, line) in csv.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [s, variant, horizon, metric, value, count] = fields[..] else {
            return Err(Error::Parse(format!("report.csv line {}: {line:?}", idx + 1)));
        };
        if horizon != "all" {
            continue;
        }
        let parse_err = |e: String| Error::Parse(format!("report.csv line {}: {e}", idx + 1));
        rows.push(Row {
            slice: s.parse()?,
            variant: variant.to_string(),
            metric: metric.to_string(),
            value: value.parse().map_err(|e| parse_err(format!("{e}")))?,
            count: count.parse().map_err(|e| parse_err(format!("{e}")))?,
        });
    }
    for kind in SliceKind::ALL {
        if !slice.keeps(kind) {
            continue;
        }
        let of_slice: Vec<&Row> = rows.iter().filter(|r| r.slice == kind).collect();
        if of_slice.is_empty() {
            continue;
        }
        let samples = of_slice[0].count;
        println!("\n[{kind}] ({samples} samples, pooled over horizons)");
        println!("{:<10} {:>12} {:>12} {:>12}", "variant", "mae", "mape %", "rmse");
        let mut variants: Vec<&str> = of_slice.iter().map(|r| r.variant.as_str()).collect();
        variants.dedup();
        for variant in variants {
            let cell = |metric: &str| {
                of_slice
                    .iter()
                    .find(|r| r.variant == variant && r.metric == metric)
                    .map(|r| format!("{:.6}", r.value))
                    .unwrap_or_else(|| "-".into())
            };
            println!(
                "{variant:<10} {:>12} {:>12} {:>12}",
                cell("mae"),
                cell("mape"),
                cell("rmse")
            );
        }
    }
    Ok(())
}
