use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::{DataArgs, EvalArgs, PrepareArgs, SweepArgs, SynthArgs, TrainArgs};
use crate::data::{
    generate_synthetic_domain, load_samples, load_tree, make_splits, read_manifest, write_manifest, Catalog, Domain,
    DomainSample, SplitSpec, SynthDomainParams,
};
use crate::error::{Error, Result};
use crate::metrics::{build_report, evaluate, DatasetMetrics, Layout, RunResults};
use crate::net::{checkpoint, DomainId, ModelBundle, Phase};
use crate::train::{train_step1, train_step2, CheckpointRecord, SourceSplit, TrainIo};

/// Written to `<output_dir>/result.json` by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub step: u8,
    pub best: Option<CheckpointRecord>,
    pub optimizer_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStatus {
    Done,
    Failed,
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda_ce: f64,
    pub lambda_kld: f64,
    pub source_miou: Option<f64>,
    pub target_miou: Option<f64>,
    pub status: SweepStatus,
    pub detail: String,
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(root) = &data.root {
        cfg.data.root = Some(root.clone());
    }
    if let Some(manifest) = &data.manifest {
        cfg.data.manifest = Some(manifest.clone());
    }
    if let Some(target) = &data.target_root {
        cfg.data.target_root = Some(target.clone());
    }
    if let Some(size) = data.size {
        cfg.data.input_size = [size, size];
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn all_ids(catalog: &Catalog) -> Vec<(&str, &str)> {
    catalog
        .entries
        .iter()
        .flat_map(|e| e.samples.iter().map(move |s| (e.name.as_str(), s.stem.as_str())))
        .collect()
}

fn mask_crack_fraction(paths: &[&Path]) -> Result<f64> {
    let (mut crack, mut total) = (0u64, 0u64);
    for path in paths {
        let mask = image::open(path)
            .map_err(|source| Error::Decode {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        crack += mask.pixels().filter(|p| p.0[0] != 0).count() as u64;
        total += mask.len() as u64;
    }
    Ok(if total == 0 { 0.0 } else { crack as f64 / total as f64 })
}

pub(super) fn prepare(mut cfg: RunConfig, args: &PrepareArgs) -> Result<()> {
    apply_data_args(&mut cfg, &args.data);
    if let Some(name) = &args.exclude {
        cfg.data.excluded_sub_dataset = Some(name.clone());
    }
    let catalog = load_tree(cfg.root()?)?;
    let spec = make_splits(&catalog, cfg.data.excluded_sub_dataset.as_deref(), cfg.train.seed)?;
    let manifest = cfg.manifest_path();
    write_manifest(&spec, &manifest)?;

    let mut summary = String::from("sub_dataset\timages\tcrack_pct\ttrain\tval\trole\n");
    for entry in &catalog.entries {
        let masks: Vec<&Path> = entry.samples.iter().filter_map(|s| s.mask.as_deref()).collect();
        let crack = if masks.is_empty() {
            "-".to_string()
        } else {
            format!("{:.2}", 100.0 * mask_crack_fraction(&masks)?)
        };
        let (train, val, role) = match spec.parts.get(&entry.name) {
            Some(p) => (p.train.len(), p.val.len(), "source"),
            None => (0, 0, "target"),
        };
        writeln!(
            summary,
            "{}\t{}\t{crack}\t{train}\t{val}\t{role}",
            entry.name,
            entry.len()
        )
        .unwrap();
    }
    writeln!(
        summary,
        "total\t{}\t-\t{}\t{}\t-",
        catalog.total(),
        spec.train_count(),
        spec.val_count()
    )
    .unwrap();
    write_file(&cfg.output_dir().join("catalog.tsv"), &summary)?;
    print!("{summary}");
    println!("manifest: {}", manifest.display());
    Ok(())
}

struct LoadedSplit {
    spec: SplitSpec,
    catalog: Catalog,
}

fn load_split(cfg: &RunConfig) -> Result<LoadedSplit> {
    let manifest = cfg.manifest_path();
    if !manifest.exists() {
        return Err(Error::usage(format!(
            "split manifest {} not found; run `adaptseg prepare` first or pass --manifest",
            manifest.display()
        )));
    }
    let spec = read_manifest(&manifest)?;
    let catalog = load_tree(cfg.root()?)?;
    Ok(LoadedSplit { spec, catalog })
}

fn source_split(split: &LoadedSplit, size: (usize, usize)) -> Result<SourceSplit> {
    Ok(SourceSplit {
        train: load_samples(&split.catalog, &split.spec.train_ids(), Domain::Source, size)?,
        val: load_samples(&split.catalog, &split.spec.val_ids(), Domain::Source, size)?,
    })
}

fn excluded_ids(spec: &SplitSpec) -> Vec<(&str, &str)> {
    match &spec.excluded_sub_dataset {
        Some(name) => spec.target_ids.iter().map(|s| (name.as_str(), s.as_str())).collect(),
        None => Vec::new(),
    }
}

/// Excluded sub-dataset plus every sample under `data.target_root`.
fn target_pool(cfg: &RunConfig, split: &LoadedSplit, size: (usize, usize)) -> Result<Vec<DomainSample>> {
    let mut pool = load_samples(&split.catalog, &excluded_ids(&split.spec), Domain::Target, size)?;
    if let Some(root) = &cfg.data.target_root {
        let extra = load_tree(root)?;
        pool.extend(load_samples(&extra, &all_ids(&extra), Domain::Target, size)?);
    }
    Ok(pool)
}

pub(super) fn train(mut cfg: RunConfig, args: &TrainArgs) -> Result<TrainResult> {
    apply_data_args(&mut cfg, &args.data);
    let t = &mut cfg.train;
    match (args.step, args.epochs) {
        (1, Some(e)) => t.step1_epochs = e,
        (_, Some(e)) => t.step2_total_epochs = e,
        _ => {}
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.seg_epochs {
        t.seg_epochs_per_cycle = v;
    }
    if let Some(v) = args.adv_epochs {
        t.adv_epochs_per_cycle = v;
    }
    if let Some(v) = args.lambda_ce {
        t.loss_weights.lambda_ce = v;
    }
    if let Some(v) = args.lambda_kld {
        t.loss_weights.lambda_kld = v;
    }
    if let Some(v) = args.gamma {
        t.lambda_schedule.gamma = v;
    }
    t.use_kld &= !args.no_kld;
    t.use_grl &= !args.no_grl;
    t.hflip |= args.hflip;
    let cfg = cfg.finalize()?;

    let mut bundle = match (args.step, &args.from_checkpoint) {
        (2, None) => {
            return Err(Error::usage(
                "train --step 2 requires --from-checkpoint <step-1 checkpoint>",
            ))
        }
        (2, Some(path)) => {
            if !path.exists() {
                return Err(Error::Checkpoint(format!("{} does not exist", path.display())));
            }
            checkpoint::load(path)?.0
        }
        (_, Some(path)) => {
            return Err(Error::usage(format!(
                "--from-checkpoint {} only applies to --step 2",
                path.display()
            )))
        }
        (_, None) => ModelBundle::build(&cfg.arch(), 1, cfg.train.seed)?,
    };
    let arch = bundle.arch();
    let size = (arch.input_height, arch.input_width);
    let split = load_split(&cfg)?;
    let source = source_split(&split, size)?;
    let out = cfg.output_dir();
    cfg.save(&out.join("config.toml"))?;
    let io = TrainIo {
        checkpoint_dir: Some(cfg.checkpoint_dir()),
        log_path: Some(cfg.log_path()),
    };

    let outcome = if args.step == 1 {
        train_step1(&mut bundle, &source, &cfg.train, &io)?
    } else {
        let pool = target_pool(&cfg, &split, size)?;
        bundle.add_domain()?;
        bundle.set_trainability(Phase::Step2)?;
        train_step2(&mut bundle, &source, &pool, &cfg.train, &io)?
    };
    let result = TrainResult {
        step: args.step,
        best: outcome.best,
        optimizer_steps: outcome.optimizer_steps,
    };
    write_file(&out.join("result.json"), &serde_json::to_string_pretty(&result)?)?;
    match &result.best {
        Some(b) => println!(
            "step {} best epoch {}: source mIoU {:.4}, target mIoU {}",
            result.step,
            b.epoch,
            b.source_miou,
            b.target_miou.map_or("-".into(), |t| format!("{t:.4}"))
        ),
        None => println!("step {}: no checkpoint saved", result.step),
    }
    Ok(result)
}

/// Samples of a named pool; errors name the pool when a sub-dataset has no masks.
fn labeled_pool(
    name: &str,
    catalog: &Catalog,
    ids: &[(&str, &str)],
    size: (usize, usize),
) -> Result<Vec<DomainSample>> {
    for (sub, _) in ids {
        if let Some(entry) = catalog.get(sub) {
            if !entry.is_labeled() {
                return Err(Error::Ingestion(format!(
                    "pool {name}: sub-dataset {sub} under {} has no masks directory",
                    catalog.root.display()
                )));
            }
        }
    }
    load_samples(catalog, ids, Domain::Target, size)
}

pub(super) fn eval(mut cfg: RunConfig, args: &EvalArgs) -> Result<Vec<RunResults>> {
    apply_data_args(&mut cfg, &args.data);
    let mut extra_pools = Vec::new();
    for spec in &args.pools {
        let (name, dir) = spec
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("--pool expects NAME=DIR, got {spec:?}")))?;
        extra_pools.push((name.to_string(), PathBuf::from(dir)));
    }
    let split = if cfg.manifest_path().exists() {
        Some(load_split(&cfg)?)
    } else {
        None
    };
    let target_catalog = cfg.data.target_root.as_deref().map(load_tree).transpose()?;
    let extra_catalogs = extra_pools
        .iter()
        .map(|(name, dir)| Ok((name.clone(), load_tree(dir)?)))
        .collect::<Result<Vec<_>>>()?;
    let row = args.row.clone().unwrap_or_else(|| {
        split
            .as_ref()
            .and_then(|s| s.spec.excluded_sub_dataset.clone())
            .unwrap_or_else(|| "run".to_string())
    });

    let mut runs = Vec::new();
    for path in &args.checkpoints {
        let (bundle, meta) = checkpoint::load(path)?;
        let size = (bundle.arch().input_height, bundle.arch().input_width);
        let domain = *bundle.registered_domains().last().unwrap_or(&DomainId::SOURCE);
        let mut pools: Vec<(String, Vec<DomainSample>)> = Vec::new();
        if let Some(s) = &split {
            pools.push((
                "source".into(),
                labeled_pool("source", &s.catalog, &s.spec.val_ids(), size)?,
            ));
            let excluded = excluded_ids(&s.spec);
            if !excluded.is_empty() {
                pools.push((
                    "excluded".into(),
                    labeled_pool("excluded", &s.catalog, &excluded, size)?,
                ));
            }
        }
        if let Some(c) = &target_catalog {
            pools.push(("buildcrack".into(), labeled_pool("buildcrack", c, &all_ids(c), size)?));
        }
        for (name, c) in &extra_catalogs {
            pools.push((name.clone(), labeled_pool(name, c, &all_ids(c), size)?));
        }
        if pools.is_empty() {
            return Err(Error::usage(
                "nothing to evaluate; pass --root with a manifest, --target-root or --pool",
            ));
        }

        let mut datasets: Vec<DatasetMetrics> = Vec::new();
        for (name, samples) in &pools {
            datasets.push(evaluate(&bundle, samples, domain, name)?);
        }
        if !datasets.iter().any(|d| d.name == "target") {
            let parts: Vec<&DatasetMetrics> = datasets
                .iter()
                .filter(|d| d.name == "excluded" || d.name == "buildcrack")
                .collect();
            if !parts.is_empty() {
                let confusion = parts
                    .iter()
                    .fold(Default::default(), |acc: crate::metrics::ConfusionMatrix, d| {
                        acc.merge(&d.confusion)
                    });
                let images = parts.iter().map(|d| d.images).sum();
                datasets.push(DatasetMetrics::from_confusion("target", confusion, images)?);
            }
        }
        let mut run = RunResults::new(&row, meta.step, datasets);
        if let Some((kld, grl)) = meta.switches {
            run.use_kld = kld;
            run.use_grl = grl;
        }
        runs.push(run);
    }

    let report = build_report(&runs, args.layout)?;
    let table = report.render_table();
    let out = cfg.output_dir();
    let stem = format!("eval_{}", layout_name(args.layout));
    write_file(&out.join(format!("{stem}.txt")), &table)?;
    write_file(&out.join(format!("{stem}.records")), &report.to_records())?;
    print!("{table}");
    Ok(runs)
}

fn layout_name(layout: Layout) -> &'static str {
    match layout {
        Layout::Table2 => "table2",
        Layout::Table3 => "table3",
        Layout::Table4 => "table4",
    }
}

const GRID_STEPS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Cells of the sweep. Without explicit values: `lambda_kld` over
/// 0.1..=1.0 at `lambda_ce = 1`, then `lambda_ce` over 0.1..=1.0 at
/// `lambda_kld = 0.1`, without repeating the shared cell.
pub(super) fn sweep_grid(ce: Option<&[f64]>, kld: Option<&[f64]>) -> Vec<(f64, f64)> {
    if ce.is_none() && kld.is_none() {
        let mut cells: Vec<(f64, f64)> = GRID_STEPS.iter().map(|&k| (1.0, k)).collect();
        cells.extend(GRID_STEPS.iter().filter(|&&c| c != 1.0).map(|&c| (c, 0.1)));
        return cells;
    }
    let ce = ce.unwrap_or(&[1.0]);
    let kld = kld.unwrap_or(&[0.1]);
    ce.iter().flat_map(|&c| kld.iter().map(move |&k| (c, k))).collect()
}

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()?.join(path)
    })
}

pub(super) fn sweep(mut cfg: RunConfig, args: &SweepArgs) -> Result<Vec<SweepCell>> {
    apply_data_args(&mut cfg, &args.data);
    if let Some(e) = args.epochs {
        cfg.train.step2_total_epochs = e;
    }
    let cfg = cfg.finalize()?;
    if !args.from_checkpoint.exists() {
        return Err(Error::Checkpoint(format!(
            "{} does not exist",
            args.from_checkpoint.display()
        )));
    }
    let checkpoint = absolute(&args.from_checkpoint)?;
    let out = absolute(&cfg.output_dir())?;
    let exe = std::env::current_exe()?;
    let cells = sweep_grid(args.ce.as_deref(), args.kld.as_deref());

    let mut rows = Vec::new();
    for (ce, kld) in cells {
        let dir = out.join("sweep").join(format!("ce{ce}_kld{kld}"));
        let result_path = dir.join("result.json");
        if !result_path.exists() {
            let mut cell = cfg.clone();
            cell.train.loss_weights.lambda_ce = ce;
            cell.train.loss_weights.lambda_kld = kld;
            cell.data.root = cfg.data.root.as_deref().map(absolute).transpose()?;
            cell.data.target_root = cfg.data.target_root.as_deref().map(absolute).transpose()?;
            cell.data.manifest = Some(absolute(&cfg.manifest_path())?);
            cell.io.output_dir = Some(dir.clone());
            cell.io.checkpoint_dir = None;
            cell.io.log_path = None;
            let cell_config = dir.join("cell.toml");
            cell.save(&cell_config)?;
            log::info!("sweep cell lambda_ce={ce} lambda_kld={kld}");
            let cell_log = std::fs::File::create(dir.join("train.log"))?;
            let status = Process::new(&exe)
                .arg("train")
                .arg("--step")
                .arg("2")
                .arg("--from-checkpoint")
                .arg(&checkpoint)
                .arg("--config")
                .arg(&cell_config)
                .env_remove("ADAPTSEG_DATA_ROOT")
                .stdout(cell_log.try_clone()?)
                .stderr(cell_log)
                .status();
            let failure = match status {
                Ok(s) if s.success() => None,
                Ok(s) => Some(format!(
                    "train exited with {s}; see {}",
                    dir.join("train.log").display()
                )),
                Err(e) => Some(format!("could not start {}: {e}", exe.display())),
            };
            if let Some(detail) = failure {
                log::warn!("sweep cell ({ce}, {kld}) failed: {detail}");
                rows.push(SweepCell {
                    lambda_ce: ce,
                    lambda_kld: kld,
                    source_miou: None,
                    target_miou: None,
                    status: SweepStatus::Failed,
                    detail,
                });
                continue;
            }
        }
        let result: TrainResult = serde_json::from_str(&std::fs::read_to_string(&result_path)?)?;
        rows.push(SweepCell {
            lambda_ce: ce,
            lambda_kld: kld,
            source_miou: result.best.as_ref().map(|b| b.source_miou),
            target_miou: result.best.as_ref().and_then(|b| b.target_miou),
            status: SweepStatus::Done,
            detail: String::new(),
        });
    }

    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let mut table = String::from("lambda_ce\tlambda_kld\tsource_miou\ttarget_miou\tstatus\n");
    for r in &rows {
        let status = match r.status {
            SweepStatus::Done => "done",
            SweepStatus::Failed => "failed",
        };
        writeln!(
            table,
            "{}\t{}\t{}\t{}\t{status}",
            r.lambda_ce,
            r.lambda_kld,
            fmt(r.source_miou),
            fmt(r.target_miou)
        )
        .unwrap();
    }
    write_file(&out.join("sweep.tsv"), &table)?;
    print!("{table}");
    Ok(rows)
}

fn to_rgb(sample: &DomainSample) -> RgbImage {
    let (h, w) = (sample.height, sample.width);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| (sample.image[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn to_mask(sample: &DomainSample, label: &[u8]) -> GrayImage {
    let w = sample.width;
    GrayImage::from_fn(w as u32, sample.height as u32, |x, y| {
        image::Luma([if label[y as usize * w + x as usize] != 0 {
            255
        } else {
            0
        }])
    })
}

fn write_tree(root: &Path, sub: &str, samples: &[DomainSample]) -> Result<()> {
    let images = root.join(sub).join("images");
    let masks = root.join(sub).join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:05}.png");
        let save = |img: image::DynamicImage, path: PathBuf| {
            img.save(&path)
                .map_err(|e| Error::Ingestion(format!("cannot write {}: {e}", path.display())))
        };
        save(to_rgb(s).into(), images.join(&name))?;
        if let Some(label) = &s.label {
            save(to_mask(s, label).into(), masks.join(&name))?;
        }
    }
    Ok(())
}

pub(super) fn synth(cfg: RunConfig, args: &SynthArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Error::usage("synth --n must be at least 1"));
    }
    let size = args.size.unwrap_or(cfg.data.input_size[0]);
    let seed = cfg.train.seed;
    let out = cfg.output_dir();
    let domains = [
        (
            "domain_a",
            "synth_a",
            SynthDomainParams::domain_a(size, seed.wrapping_mul(2)),
            Domain::Source,
        ),
        (
            "domain_b",
            "synth_b",
            SynthDomainParams::domain_b(size, seed.wrapping_mul(2) + 1),
            Domain::Target,
        ),
    ];
    let mut fractions = BTreeMap::new();
    for (tree, sub, params, domain) in domains {
        let data = generate_synthetic_domain(&params, args.n, domain)?;
        write_tree(&out.join(tree), sub, &data.samples)?;
        fractions.insert(tree, data.mean_crack_fraction());
    }
    for (tree, f) in fractions {
        println!(
            "{}: {} images, {:.2}% crack pixels",
            out.join(tree).display(),
            args.n,
            100.0 * f
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_the_supplementary_cross() {
        let cells = sweep_grid(None, None);
        assert_eq!(cells.len(), 19);
        assert!(cells.contains(&(1.0, 0.1)));
        assert_eq!(cells.iter().filter(|c| **c == (1.0, 0.1)).count(), 1);
    }

    #[test]
    fn explicit_grid_is_a_product() {
        let cells = sweep_grid(Some(&[0.5, 1.0]), Some(&[0.1, 0.2]));
        assert_eq!(cells, vec![(0.5, 0.1), (0.5, 0.2), (1.0, 0.1), (1.0, 0.2)]);
    }
}
