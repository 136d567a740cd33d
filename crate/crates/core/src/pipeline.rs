//! End-to-end commands. The CLI is a thin wrapper over these functions, so
//! every artifact it writes can be reproduced from the library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{train_with_checkpoints, SmallDenoiserNet};
use crate::diffusion::sample_unconditional;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::guidance::sample_guided;
use crate::io::config::ExperimentConfig;
use crate::io::manifest::load_guidance;
use crate::io::{
    self, encode_loss_csv, encode_pgm, read_checkpoint, read_image, sha256_hex, write_atomic, write_checkpoint,
    write_image, write_json, write_schedule, DatasetEntry, DatasetManifest, RunRecord, Timings,
};
use crate::metrics::{best_matches, extract_stats, frechet_distance, ssim, to_unit_range, FeatureExtractor};
use crate::phantom::{
    anatomy_hash, denormalize, gen_anatomy, render_phantom, to_window, RenderConfig, WindowPreset,
};
use crate::rng::derive_seed;
use crate::schedule::build_schedule;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CHECKPOINT_NAME: &str = "model.dnsr";
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5EED;

fn relative_hashes(dir: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().replace('\\', "/");
            Ok((rel, sha256_hex(&io::read_bytes(f)?)))
        })
        .collect()
}

fn write_record(dir: &Path, name: &str, record: &RunRecord, timings: &Timings) -> Result<()> {
    write_json(&dir.join(format!("{name}.json")), record)?;
    write_json(&dir.join(format!("{name}{}", io::TIMINGS_SUFFIX)), timings)
}

/// Generate `count` phantoms of `shape` into `out`, plus a manifest.
/// Sample `i` uses anatomy seed `derive_seed(seed, 2i)` and texture seed
/// `derive_seed(seed, 2i + 1)`.
pub fn phantom_gen(out: &Path, count: usize, shape: (usize, usize), seed: u64) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::invalid("phantom count must be positive"));
    }
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let anatomy_seed = derive_seed(seed, 2 * i as u64);
            let texture_seed = derive_seed(seed, 2 * i as u64 + 1);
            let (_, map) = gen_anatomy(anatomy_seed, shape)?;
            let img = render_phantom(&map, texture_seed, &RenderConfig::default())?;
            let entry = DatasetEntry {
                index: i,
                anatomy_seed,
                texture_seed,
                image: format!("phantom_{i:05}_image.imgf"),
                map: format!("phantom_{i:05}_map.imgf"),
                anatomy_hash: anatomy_hash(&map),
            };
            write_image(&out.join(&entry.image), &img)?;
            write_image(&out.join(&entry.map), &map)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        seed,
        width: shape.0,
        height: shape.1,
        samples,
    };
    write_json(&out.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    pub record: RunRecord,
}

/// Train per `cfg`, writing the canonical config, schedule, checkpoint(s),
/// loss trace and run record under the output directory.
pub fn train_run(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let start = Instant::now();
    let out = cfg.output_dir();
    let manifest_path = cfg.dataset_path();
    let manifest = DatasetManifest::load(&manifest_path)?;
    let data = manifest.load_images(&manifest_path)?;
    let sched = build_schedule(cfg.schedule.kind, cfg.schedule.steps)?;
    let arch = cfg.model.architecture((manifest.width, manifest.height));
    let init = SmallDenoiserNet::initialize(arch, cfg.seeds.master)?;
    let tcfg = cfg.train_config();
    log::info!(
        "training {} parameters for {} steps on {} images",
        init.parameters().len(),
        tcfg.steps,
        data.len()
    );

    let mut files = Vec::new();
    let config_text = cfg.to_toml();
    let config_path = out.join("config.toml");
    write_atomic(&config_path, config_text.as_bytes())?;
    files.push(config_path);
    let sched_path = out.join("schedule.vsch");
    write_schedule(&sched_path, &sched)?;
    files.push(sched_path);

    let ckpt_dir = out.join("checkpoints");
    let outcome = train_with_checkpoints(&init, &data, &tcfg, &sched, |step, net| {
        let p = ckpt_dir.join(format!("step_{step:06}.dnsr"));
        write_checkpoint(&p, net)?;
        files.push(p);
        Ok(())
    })?;
    let checkpoint = out.join(CHECKPOINT_NAME);
    write_checkpoint(&checkpoint, &outcome.model)?;
    files.push(checkpoint.clone());
    let loss_path = out.join("loss.csv");
    write_atomic(&loss_path, encode_loss_csv(&outcome.losses).as_bytes())?;
    files.push(loss_path);

    let mut metrics = BTreeMap::new();
    if let Some(l) = outcome.losses.last() {
        metrics.insert("final_loss".into(), *l);
    }
    let tail = &outcome.losses[outcome.losses.len().saturating_sub(100)..];
    metrics.insert("tail_mean_loss".into(), tail.iter().sum::<f64>() / tail.len() as f64);
    let record = RunRecord {
        command: "train".into(),
        config_sha256: Some(sha256_hex(config_text.as_bytes())),
        seeds: BTreeMap::from([
            ("master".into(), cfg.seeds.master),
            ("train".into(), cfg.seeds.train),
        ]),
        artifacts: relative_hashes(&out, &files)?,
        metrics,
    };
    let timings = Timings {
        seconds: BTreeMap::from([("train".into(), start.elapsed().as_secs_f64())]),
    };
    write_record(&out, "train_run", &record, &timings)?;
    Ok(TrainReport {
        output: out,
        checkpoint,
        losses: outcome.losses,
        record,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub file: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_sha256: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SampleRequest {
    pub checkpoint: Option<PathBuf>,
    pub guidance: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct SampleReport {
    pub output: PathBuf,
    pub samples: Vec<ImageGrid>,
    pub provenance: Vec<SampleProvenance>,
}

/// Seed of chain `index` in a run seeded with `seed`.
pub fn chain_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Draw `count` model-space samples. Without a guidance manifest this is
/// plain ancestral sampling; with one (even an empty one) the guided
/// sampler runs. Chains run in parallel and each writes its own file.
pub fn sample_run(cfg: &ExperimentConfig, req: &SampleRequest) -> Result<SampleReport> {
    let start = Instant::now();
    if req.count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let ckpt = req
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.output_dir().join(CHECKPOINT_NAME));
    let net = read_checkpoint(&ckpt)?;
    let shape = net
        .architecture()
        .input_shape()
        .ok_or_else(|| Error::invalid("sampling needs a model bound to an image shape"))?;
    let sched = build_schedule(cfg.schedule.kind, cfg.schedule.steps)?;
    let guidance = req.guidance.as_deref().map(load_guidance).transpose()?;
    if let Some((set, _)) = &guidance {
        set.validate_for(shape, sched.steps())?;
    }
    let out = req.out.clone().unwrap_or_else(|| cfg.output_dir().join("samples"));

    let results = (0..req.count)
        .into_par_iter()
        .map(|i| {
            let seed = chain_seed(req.seed, i);
            let img = match &guidance {
                Some((set, _)) => sample_guided(&net, &sched, set, shape, seed)?,
                None => sample_unconditional(&net, &sched, shape, seed)?,
            };
            let file = format!("sample_{i:04}.imgf");
            write_image(&out.join(&file), &img)?;
            let prov = SampleProvenance {
                file,
                seed,
                guidance_sha256: guidance.as_ref().map(|(_, h)| h.clone()),
            };
            Ok((img, prov))
        })
        .collect::<Result<Vec<_>>>()?;
    let (samples, provenance): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    write_json(&out.join("samples.json"), &provenance)?;

    let files: Vec<PathBuf> = provenance.iter().map(|p| out.join(&p.file)).collect();
    let record = RunRecord {
        command: "sample".into(),
        config_sha256: Some(sha256_hex(cfg.to_toml().as_bytes())),
        seeds: BTreeMap::from([("sample".into(), req.seed)]),
        artifacts: relative_hashes(&out, &files)?,
        metrics: BTreeMap::new(),
    };
    let timings = Timings {
        seconds: BTreeMap::from([("sample".into(), start.elapsed().as_secs_f64())]),
    };
    write_record(&out, "sample_run", &record, &timings)?;
    Ok(SampleReport {
        output: out,
        samples,
        provenance,
    })
}

/// Read every evaluable IMGF image in `dir` (sorted by name) in `[0, 1]`.
/// HU images go through the full window, model-space images are mapped
/// linearly, label maps are skipped.
pub fn load_eval_set(dir: &Path) -> Result<Vec<(String, ImageGrid)>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".imgf"))
        .collect();
    names.sort();
    let mut out = Vec::new();
    for n in names {
        let img = read_image(&dir.join(&n))?;
        let unit = match img.range() {
            ValueRange::Label => continue,
            ValueRange::Hu => to_window(&img, WindowPreset::Full)?,
            ValueRange::Binary | ValueRange::Unit => img.with_range(ValueRange::Unit),
            ValueRange::Normalized => to_unit_range(&img),
        };
        out.push((n, unit));
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("no images to evaluate in {}", dir.display())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub generated_count: usize,
    pub reference_count: usize,
    pub set_ssim: f64,
    pub frechet: f64,
    pub extractor_seed: u64,
    pub generated_regularized: bool,
    pub reference_regularized: bool,
    pub best_match: Vec<BestMatch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub generated: String,
    pub ssim: f64,
}

/// Metrics of `generated` against `reference`. Writes `report` (JSON) and
/// a sibling `.csv` with SSIM for every generated/reference pair.
pub fn eval_run(generated: &Path, reference: &Path, report: &Path, extractor_seed: u64) -> Result<EvalReport> {
    let gen = load_eval_set(generated)?;
    let refs = load_eval_set(reference)?;
    let g: Vec<ImageGrid> = gen.iter().map(|(_, i)| i.clone()).collect();
    let r: Vec<ImageGrid> = refs.iter().map(|(_, i)| i.clone()).collect();
    let best = best_matches(&g, &r)?;
    let extractor = FeatureExtractor::new(extractor_seed);
    let (sg, sr) = (extract_stats(&g, &extractor)?, extract_stats(&r, &extractor)?);
    let rep = EvalReport {
        generated_count: g.len(),
        reference_count: r.len(),
        set_ssim: best.iter().sum::<f64>() / best.len() as f64,
        frechet: frechet_distance(&sg, &sr)?,
        extractor_seed,
        generated_regularized: sg.regularized,
        reference_regularized: sr.regularized,
        best_match: gen
            .iter()
            .zip(&best)
            .map(|((n, _), s)| BestMatch {
                generated: n.clone(),
                ssim: *s,
            })
            .collect(),
    };
    let rows = gen
        .par_iter()
        .map(|(gn, gi)| {
            refs.iter()
                .map(|(rn, ri)| Ok(format!("{gn},{rn},{:.17e}\n", ssim(gi, ri)?)))
                .collect::<Result<String>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = std::iter::once("generated,reference,ssim\n".to_string())
        .chain(rows)
        .collect::<String>();
    write_json(report, &rep)?;
    write_atomic(&report.with_extension("csv"), csv.as_bytes())?;
    Ok(rep)
}

/// One 8-bit PGM per window, named `<stem>_<window>.pgm`. Model-space
/// images are converted back to HU first.
pub fn export_run(image: &Path, windows: &[WindowPreset], out: &Path) -> Result<Vec<PathBuf>> {
    let img = read_image(image)?;
    let hu = match img.range() {
        ValueRange::Hu => img,
        ValueRange::Normalized => denormalize(&img),
        other => {
            return Err(Error::invalid(format!(
                "window export needs an HU or model-space image, got {other:?}"
            )))
        }
    };
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    windows
        .iter()
        .map(|w| {
            let p = out.join(format!("{stem}_{}.pgm", w.name()));
            write_atomic(&p, &encode_pgm(&to_window(&hu, *w)?)?)?;
            Ok(p)
        })
        .collect()
}
