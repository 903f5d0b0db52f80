use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use mojito::data::{
    k_core_filter, leave_one_out_split, load_events, parse_stats, write_events_tsv, ContextSchema,
    Dataset, EventFormat, SplitDataset,
};
use mojito::eval::{
    evaluate, format_redundancy, head_redundancy, probe_sequences, EvalReport, EvalSplit,
};
use mojito::model::MojitoModel;
use mojito::synth::{generate, SyntheticSpec};
use mojito::tensor::Checkpoint;
use mojito::trainer::{train, EpochLog};
use mojito::MojitoConfig;

use crate::manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCH_LOG_FILE: &str = "epochs.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// `<path>.manifest.json`
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
        bail!(
            "{} already exists and is not empty; pass --force to overwrite",
            dir.display()
        );
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn dataset_stats(dir: &Path, ds: &Dataset) -> Result<std::collections::BTreeMap<String, String>> {
    let text = fs::read_to_string(dir.join("stats.txt")).unwrap_or_default();
    let mut stats: std::collections::BTreeMap<String, String> =
        parse_stats(&text).into_iter().collect();
    stats.insert("path".into(), dir.display().to_string());
    stats.insert("fingerprint".into(), ds.fingerprint());
    stats.insert("users".into(), ds.n_users().to_string());
    stats.insert("items".into(), ds.n_items().to_string());
    stats.insert("events".into(), ds.n_events().to_string());
    Ok(stats)
}

pub struct PreprocessArgs {
    pub input: PathBuf,
    pub format: EventFormat,
    pub k_user: usize,
    pub k_item: usize,
    pub schema: ContextSchema,
    pub out: PathBuf,
    pub force: bool,
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let start = Instant::now();
    prepare_out_dir(&a.out, a.force)?;
    let loaded = load_events(&a.input, &a.format)?;
    let core = k_core_filter(&loaded.events, a.k_user, a.k_item)?;
    let ds = Dataset::from_events(&core.events, a.schema.clone());
    println!(
        "before: {} users, {} items, {} events ({} malformed rows skipped)",
        core.users_before,
        core.items_before,
        loaded.events.len(),
        loaded.malformed
    );
    println!(
        "after {}-core users / {}-core items: {} users, {} items, {} events",
        a.k_user,
        a.k_item,
        core.users_after,
        core.items_after,
        core.events.len()
    );
    let stats: Vec<(String, String)> = [
        ("k_user", a.k_user.to_string()),
        ("k_item", a.k_item.to_string()),
        ("users_before", core.users_before.to_string()),
        ("items_before", core.items_before.to_string()),
        ("events_before", loaded.events.len().to_string()),
        ("malformed_rows", loaded.malformed.to_string()),
        ("users_after", core.users_after.to_string()),
        ("items_after", core.items_after.to_string()),
        ("events_after", core.events.len().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    ds.save(&a.out, &stats)?;
    let mut m = RunManifest::new("preprocess");
    m.dataset = dataset_stats(&a.out, &ds)?;
    m.dataset
        .insert("input".into(), a.input.display().to_string());
    m.timings
        .insert("preprocess".into(), start.elapsed().as_secs_f64());
    m.write(&a.out.join(MANIFEST_FILE))
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub no_context: bool,
    pub seed: Option<u64>,
    pub force: bool,
}

fn load_split(dir: &Path) -> Result<(Dataset, SplitDataset)> {
    let ds =
        Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    let split = leave_one_out_split(&ds);
    if split.users.is_empty() {
        bail!(
            "{}: no user has the three events needed for a split",
            dir.display()
        );
    }
    Ok((ds, split))
}

pub fn load_config(path: Option<&Path>) -> Result<MojitoConfig> {
    let text = match path {
        Some(p) => {
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => String::new(),
    };
    let (cfg, notices) = MojitoConfig::parse(&text)?;
    for n in notices {
        info!("config: {n}");
    }
    Ok(cfg)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg = load_config(a.config.as_deref())?;
    if a.no_context {
        cfg.no_context = true;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let (ds, split) = load_split(&a.data)?;
    if cfg.schema != ds.schema {
        bail!(
            "config schema {} differs from the dataset's {}",
            cfg.schema,
            ds.schema
        );
    }
    prepare_out_dir(&a.out, a.force)?;
    let log_path = a.out.join(EPOCH_LOG_FILE);
    let mut log_file =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(log_file, "{}", EpochLog::HEADER)?;
    let model = MojitoModel::new(cfg.clone(), split.n_users, split.n_items)?;
    let mut io_error = None;
    let outcome = train(model, &split, |e| {
        info!(
            "epoch {}: loss {:.4}, val NDCG@10 {:.4}, HR@10 {:.4}",
            e.epoch, e.train_loss, e.val_ndcg10, e.val_hr10
        );
        if let Err(err) = writeln!(log_file, "{}", e.to_tsv()) {
            io_error.get_or_insert(err);
        }
    })?;
    if let Some(err) = io_error {
        return Err(err).context(format!("writing {}", log_path.display()));
    }
    let ckpt = a.out.join(CHECKPOINT_FILE);
    outcome.best.to_checkpoint(&ds.fingerprint()).save(&ckpt)?;
    let best = outcome.log.iter().find(|e| e.epoch == outcome.best_epoch);
    println!(
        "best epoch {} of {}{}: val NDCG@10 {:.4}, HR@10 {:.4}",
        outcome.best_epoch,
        outcome.log.len(),
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        best.map_or(0.0, |e| e.val_ndcg10),
        best.map_or(0.0, |e| e.val_hr10)
    );

    let mut m = RunManifest::new("train");
    m.config = cfg.pairs().into_iter().collect();
    m.config_hash = Some(cfg.hash());
    m.dataset = dataset_stats(&a.data, &ds)?;
    m.seeds.insert("model".into(), cfg.seed);
    m.seeds.insert("validation".into(), cfg.seed);
    m.checkpoint = Some(ckpt);
    m.reports.push(log_path);
    m.timings
        .insert("train".into(), start.elapsed().as_secs_f64());
    m.write(&a.out.join(MANIFEST_FILE))
}

/// Loads a checkpoint and refuses it unless it was trained on `ds`.
fn load_model(path: &Path, ds: &Dataset) -> Result<MojitoModel> {
    let ck =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let trained_on = ck.meta.get("dataset").cloned().unwrap_or_default();
    let fingerprint = ds.fingerprint();
    if trained_on != fingerprint {
        bail!(
            "checkpoint was trained on dataset {trained_on}, but {fingerprint} was given; refusing to evaluate"
        );
    }
    let model = MojitoModel::from_checkpoint(ck)?;
    if model.config.schema != ds.schema {
        bail!(
            "checkpoint schema {} differs from the dataset's {}",
            model.config.schema,
            ds.schema
        );
    }
    Ok(model)
}

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: EvalSplit,
    pub seed: u64,
    pub negatives: Option<usize>,
    pub out: PathBuf,
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let (ds, split) = load_split(&a.data)?;
    let model = load_model(&a.checkpoint, &ds)?;
    let negatives = a.negatives.unwrap_or(model.config.eval_negatives);
    let out = evaluate(&model, &split, a.split, a.seed, negatives)?;
    if out.exhausted > 0 {
        log::warn!(
            "{} users had fewer than {negatives} eligible negatives",
            out.exhausted
        );
    }
    let report = EvalReport {
        hr10: out.hr10,
        ndcg10: out.ndcg10,
        head_redundancy_mean: None,
        head_redundancy_std: None,
        n_users: out.n_users(),
        seed: a.seed,
        config_hash: model.config.hash(),
    };
    fs::write(&a.out, report.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{} split, {} users: HR@10 {:.4}, NDCG@10 {:.4}",
        a.split.as_str(),
        report.n_users,
        report.hr10,
        report.ndcg10
    );
    let mut m = RunManifest::new("evaluate");
    m.config = model.config.pairs().into_iter().collect();
    m.config_hash = Some(model.config.hash());
    m.dataset = dataset_stats(&a.data, &ds)?;
    m.seeds.insert("evaluation".into(), a.seed);
    m.checkpoint = Some(a.checkpoint.clone());
    m.reports.push(a.out.clone());
    m.timings
        .insert("evaluate".into(), start.elapsed().as_secs_f64());
    m.write(&manifest_beside(&a.out))
}

pub struct DiagnoseArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub probes: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Head redundancy, mixture weights and component widths as text.
pub fn diagnostics_text(
    model: &MojitoModel,
    split: &SplitDataset,
    probes: usize,
    seed: u64,
) -> Result<String> {
    if model.config.heads < 2 {
        bail!(
            "head diagnostics need H >= 2, checkpoint has H = {}",
            model.config.heads
        );
    }
    let seqs = probe_sequences(model, split, probes, seed);
    let (mean, std) = head_redundancy(model, &seqs)?;
    let enc = model.encoder_spec();
    let mut s = String::new();
    writeln!(s, "head_redundancy\t{}", format_redundancy(mean, std))?;
    writeln!(s, "probes\t{}", seqs.len())?;
    for b in 0..enc.blocks {
        for (j, [p_it, p_c]) in enc
            .mixture_weights(&model.store, b)?
            .into_iter()
            .enumerate()
        {
            writeln!(
                s,
                "block {b} head {j}\tp_item {p_it:.4}\tp_context {p_c:.4}"
            )?;
        }
        let [s_it, s_c] = enc.sigmas(&model.store, b)?;
        writeln!(s, "block {b}\tsigma_item {s_it:.4}\tsigma_context {s_c:.4}")?;
    }
    Ok(s)
}

pub fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    let start = Instant::now();
    let (ds, split) = load_split(&a.data)?;
    let model = load_model(&a.checkpoint, &ds)?;
    let text = diagnostics_text(&model, &split, a.probes, a.seed)?;
    fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{text}");
    let mut m = RunManifest::new("diagnose-heads");
    m.config_hash = Some(model.config.hash());
    m.dataset = dataset_stats(&a.data, &ds)?;
    m.seeds.insert("probes".into(), a.seed);
    m.checkpoint = Some(a.checkpoint.clone());
    m.reports.push(a.out.clone());
    m.timings
        .insert("diagnose".into(), start.elapsed().as_secs_f64());
    m.write(&manifest_beside(&a.out))
}

pub fn synth_cmd(spec: Option<&Path>, out: &Path) -> Result<()> {
    let start = Instant::now();
    let spec = match spec {
        Some(p) => SyntheticSpec::parse(
            &fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?,
        )?,
        None => SyntheticSpec::default(),
    };
    let events = generate(&spec)?;
    write_events_tsv(out, &events)?;
    println!("wrote {} events to {}", events.len(), out.display());
    let mut m = RunManifest::new("synth");
    m.config = spec
        .to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    m.seeds.insert("synth".into(), spec.seed);
    m.reports.push(out.to_path_buf());
    m.timings
        .insert("synth".into(), start.elapsed().as_secs_f64());
    m.write(&manifest_beside(out))
}
