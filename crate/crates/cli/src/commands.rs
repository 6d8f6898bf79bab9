//! One function per subcommand. Each reads its inputs from the workspace,
//! runs one pipeline stage and writes its artifacts back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use voxcorr::dvc::multiscale_dvc;
use voxcorr::metrics::{
    bdm, evaluate_pair, export_bdm_slices, export_displacement_magnitude, export_overlay_slices, EvalReport, Method,
    RunInfo,
};
use voxcorr::preprocess::{
    binarize, build_dataset, default_split_assignment, DatasetManifest, ManifestSample, RawSample, Split,
};
use voxcorr::regnet::{checkpoint_load, checkpoint_save, sliding_register, train, EpochLog, TrainHistory};
use voxcorr::tpms::{degrade_to_xct, DeformSpec, DegradeSpec, PhantomSpec};
use voxcorr::volume::{vvol, warp};
use voxcorr::{DisplacementField, ScalarVolume};

use crate::config::sample_id;
use crate::{CliError, RunConfig};

pub const SAMPLES_FILE: &str = "samples.json";

/// Which manifest samples a command touches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    One(String),
    TestSplit,
    All,
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let path = cfg.manifest_path();
    require(&path, "dataset manifest (run `preprocess` or pass --manifest)")?;
    Ok(DatasetManifest::read(&path)?)
}

fn select<'a>(manifest: &'a DatasetManifest, sel: &Selection) -> Result<Vec<&'a ManifestSample>, CliError> {
    let out: Vec<&ManifestSample> = match sel {
        Selection::One(id) => vec![manifest
            .get(id)
            .ok_or_else(|| CliError::Validation(format!("sample `{id}` is not in the manifest")))?],
        Selection::All => manifest.samples.iter().collect(),
        Selection::TestSplit => manifest.split(Split::Test).collect(),
    };
    if out.is_empty() {
        return Err(CliError::Validation(
            "no samples selected; pass --sample <ID> or --all".into(),
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct GenerateSidecar<'a> {
    id: &'a str,
    c_param: f64,
    phantom: &'a PhantomSpec,
    deform: &'a DeformSpec,
    degrade: &'a DegradeSpec,
    files: BTreeMap<&'static str, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub id: String,
    pub c_param: f64,
    pub band_halfwidth: f64,
    /// Fraction of the grid that is solid in the CAD mask.
    pub solid_fraction: f64,
    pub max_displacement: f32,
}

impl GeneratedSample {
    pub fn summary(&self) -> String {
        format!(
            "{}  C={:+.2}  band={:.3}  solid={:.1}%  max|gt|={:.2} vox",
            self.id,
            self.c_param,
            self.band_halfwidth,
            100.0 * self.solid_fraction,
            self.max_displacement
        )
    }
}

/// One synthetic pair per C value under `<workspace>/raw`.
///
/// Sample `i` of the sweep uses the configured deformation and degradation
/// seeds offset by `i`; the sidecar records the exact specs used.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<GeneratedSample>, CliError> {
    if cfg.c_values.is_empty() {
        return Err(CliError::Validation("no C values to generate".into()));
    }
    let raw = cfg.raw_dir();
    create_dir(&raw)?;
    let results: Vec<Result<(GeneratedSample, RawSample), CliError>> = cfg
        .c_values
        .par_iter()
        .enumerate()
        .map(|(i, &c)| {
            let id = sample_id(c);
            let tag = |e: voxcorr::Error| CliError::Core(e.in_sample(&id));
            let phantom = cfg.phantom.spec(c).map_err(tag)?;
            let deform = DeformSpec {
                seed: cfg.deform.seed.wrapping_add(i as u64),
                ..cfg.deform.clone()
            };
            let degrade = DegradeSpec {
                seed: cfg.degrade.seed.wrapping_add(i as u64),
                ..cfg.degrade.clone()
            };
            let pair = degrade_to_xct(&phantom.field(), &phantom, &deform, &degrade).map_err(tag)?;

            let name = |role: &str| format!("{id}_{role}.vvol");
            let meta = |role: &str| format!("{{\"id\":\"{id}\",\"role\":\"{role}\"}}");
            vvol::write_scalar(raw.join(name("cad")), &pair.cad_gray, &meta("cad")).map_err(tag)?;
            vvol::write_binary(raw.join(name("cadmask")), &pair.cad_mask, &meta("cadmask")).map_err(tag)?;
            vvol::write_scalar(raw.join(name("xct")), &pair.xct, &meta("xct")).map_err(tag)?;
            vvol::write_field(raw.join(name("gt")), &pair.gt, &meta("gt")).map_err(tag)?;
            let files = ["cad", "cadmask", "xct", "gt"]
                .into_iter()
                .map(|r| (r, name(r)))
                .collect();
            write_json(
                &raw.join(format!("{id}.json")),
                &GenerateSidecar {
                    id: &id,
                    c_param: c,
                    phantom: &phantom,
                    deform: &deform,
                    degrade: &degrade,
                    files,
                },
            )?;
            let summary = GeneratedSample {
                id: id.clone(),
                c_param: c,
                band_halfwidth: phantom.tpms.band_halfwidth,
                solid_fraction: pair.cad_mask.count() as f64 / pair.cad_mask.dims().len() as f64,
                max_displacement: pair.gt.max_norm(),
            };
            let raw_sample = RawSample {
                id: id.clone(),
                c_param: c,
                cad_path: name("cad").into(),
                xct_path: name("xct").into(),
                gt_path: Some(name("gt").into()),
            };
            Ok((summary, raw_sample))
        })
        .collect();
    let mut summaries = Vec::new();
    let mut samples = Vec::new();
    for r in results {
        let (s, raw_sample) = r?;
        summaries.push(s);
        samples.push(raw_sample);
    }
    write_json(&raw.join(SAMPLES_FILE), &samples)?;
    Ok(summaries)
}

/// Build the dataset from `<workspace>/raw/samples.json`.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let raw = cfg.raw_dir();
    let listing = raw.join(SAMPLES_FILE);
    require(&listing, "raw sample listing (run `generate` first)")?;
    let mut samples: Vec<RawSample> = read_json(&listing)?;
    for s in &mut samples {
        s.cad_path = raw.join(&s.cad_path);
        s.xct_path = raw.join(&s.xct_path);
        if let Some(g) = &mut s.gt_path {
            *g = raw.join(&*g);
        }
        require(&s.cad_path, "CAD volume")?;
        require(&s.xct_path, "XCT volume")?;
    }
    let first = samples
        .first()
        .ok_or_else(|| CliError::Validation(format!("{} lists no samples", listing.display())))?;
    let target = match cfg.target_dims {
        Some(d) => d,
        None => vvol::read_header(&first.cad_path)?.dims,
    };
    let manifest_path = cfg.manifest_path();
    let out_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let splits = default_split_assignment(&samples);
    let manifest = build_dataset(&samples, target, &splits, &out_dir, &cfg.clean)?;
    if manifest_path.file_name() != Some(std::ffi::OsStr::new(voxcorr::preprocess::MANIFEST_FILE)) {
        manifest.write(&manifest_path)?;
    }
    Ok(manifest)
}

fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("history.json")
}

/// Train and write the checkpoint plus its loss history. Wall-clock times
/// are left out of the history file so reruns with the same seed reproduce
/// it byte for byte; the run log keeps the total duration.
pub fn cmd_train(cfg: &RunConfig, progress: impl FnMut(&EpochLog)) -> Result<TrainHistory, CliError> {
    let manifest = load_manifest(cfg)?;
    manifest.ensure_trainable()?;
    let (params, history) = train(&manifest, &cfg.model, &cfg.train, progress)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(dir) = ckpt.parent() {
        create_dir(dir)?;
    }
    checkpoint_save(&params, &ckpt)?;
    let saved = TrainHistory {
        wall_time: Vec::new(),
        ..history.clone()
    };
    write_json(&history_path(&ckpt), &saved)?;
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunRecord {
    sample_id: String,
    method: Method,
    runtime_sec: f64,
}

fn artifact(cfg: &RunConfig, id: &str, method: Method, what: &str) -> PathBuf {
    let ext = if what == "run" || what == "nodes" {
        "json"
    } else {
        "vvol"
    };
    cfg.registered_dir().join(format!("{id}_{method}_{what}.{ext}"))
}

fn read_pair(s: &ManifestSample) -> Result<(ScalarVolume, ScalarVolume), CliError> {
    let fixed = vvol::read_scalar(&s.cad_path).map_err(|e| e.in_sample(&s.id))?;
    let moving = vvol::read_scalar(&s.xct_path).map_err(|e| e.in_sample(&s.id))?;
    Ok((fixed, moving))
}

fn write_registration(
    cfg: &RunConfig,
    id: &str,
    method: Method,
    moved: &ScalarVolume,
    disp: &DisplacementField,
    secs: f64,
) -> Result<(), CliError> {
    let meta = format!("{{\"id\":\"{id}\",\"method\":\"{method}\"}}");
    vvol::write_scalar(artifact(cfg, id, method, "moved"), moved, &meta)?;
    vvol::write_field(artifact(cfg, id, method, "disp"), disp, &meta)?;
    write_json(
        &artifact(cfg, id, method, "run"),
        &RunRecord {
            sample_id: id.to_string(),
            method,
            runtime_sec: secs,
        },
    )
}

/// Sliding-window registration with a trained checkpoint. Returns runtimes.
pub fn cmd_register(cfg: &RunConfig, sel: &Selection) -> Result<Vec<(String, f64)>, CliError> {
    let ckpt = cfg.checkpoint_path();
    require(&ckpt, "checkpoint (--checkpoint)")?;
    let params = checkpoint_load(&ckpt)?;
    let patch = cfg.infer.patch_size.unwrap_or(params.config.patch_size);
    let manifest = load_manifest(cfg)?;
    create_dir(&cfg.registered_dir())?;
    let mut out = Vec::new();
    for s in select(&manifest, sel)? {
        let (fixed, moving) = read_pair(s)?;
        let t = Instant::now();
        let (moved, disp) = sliding_register(&params, &moving, &fixed, patch, cfg.infer.stride, cfg.infer.sigma)
            .map_err(|e| e.in_sample(&s.id))?;
        let secs = t.elapsed().as_secs_f64();
        write_registration(cfg, &s.id, Method::Learned, &moved, &disp, secs)?;
        out.push((s.id.clone(), secs));
    }
    Ok(out)
}

/// Node-based correlation baseline. Returns runtime and node validity counts.
pub fn cmd_baseline(cfg: &RunConfig, sel: &Selection) -> Result<Vec<(String, f64, usize, usize)>, CliError> {
    let manifest = load_manifest(cfg)?;
    create_dir(&cfg.registered_dir())?;
    let mut out = Vec::new();
    for s in select(&manifest, sel)? {
        let (fixed, moving) = read_pair(s)?;
        let t = Instant::now();
        let (disp, nodes) = multiscale_dvc(&moving, &fixed, &cfg.dvc).map_err(|e| e.in_sample(&s.id))?;
        let moved = warp(&moving, &disp)?;
        let secs = t.elapsed().as_secs_f64();
        write_registration(cfg, &s.id, Method::Baseline, &moved, &disp, secs)?;
        nodes.write_json(artifact(cfg, &s.id, Method::Baseline, "nodes"))?;
        out.push((s.id.clone(), secs, nodes.valid_count(), nodes.positions.len()));
    }
    Ok(out)
}

/// What `evaluate` scores.
#[derive(Clone, Debug)]
pub enum EvaluateTarget {
    /// Registrations previously written to the workspace.
    Workspace {
        selection: Selection,
        learned: bool,
        baseline: bool,
    },
    /// Explicit volume files.
    Files {
        fixed: PathBuf,
        moving: PathBuf,
        moved: PathBuf,
        disp: PathBuf,
        gt: Option<PathBuf>,
        out: Option<PathBuf>,
        method: Method,
    },
}

struct EvalInputs {
    fixed: ScalarVolume,
    moving: ScalarVolume,
    moved: ScalarVolume,
    disp: DisplacementField,
    gt: Option<DisplacementField>,
}

fn score(inputs: &EvalInputs, run: RunInfo, report_path: &Path, images: bool) -> Result<EvalReport, CliError> {
    let report = evaluate_pair(
        &inputs.fixed,
        &inputs.moving,
        &inputs.moved,
        &inputs.disp,
        inputs.gt.as_ref(),
        run,
    )?;
    if let Some(dir) = report_path.parent() {
        create_dir(dir)?;
    }
    report.write_json(report_path)?;
    if images {
        let stem = report_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into());
        let dir = report_path.with_file_name(format!("{stem}_slices"));
        let cad_bin = binarize(&inputs.fixed);
        export_overlay_slices(&inputs.fixed, &inputs.moving, &dir, "overlay_before")?;
        export_overlay_slices(&inputs.fixed, &inputs.moved, &dir, "overlay_after")?;
        let moved_bin = binarize(&inputs.moved);
        if moved_bin.count() + cad_bin.count() > 0 {
            export_bdm_slices(&bdm(&moved_bin, &cad_bin)?, &dir, "bdm_after")?;
        }
        if cad_bin.count() > 0 {
            export_displacement_magnitude(&inputs.disp, &cad_bin, &dir, "disp_magnitude")?;
        }
    }
    Ok(report)
}

fn read_volume(path: &Path, what: &str) -> Result<ScalarVolume, CliError> {
    require(path, what)?;
    Ok(vvol::read_scalar(path)?)
}

fn read_field(path: &Path, what: &str) -> Result<DisplacementField, CliError> {
    require(path, what)?;
    Ok(vvol::read_field(path)?)
}

/// Score registrations and write one report (plus slice images) per run.
pub fn cmd_evaluate(cfg: &RunConfig, target: &EvaluateTarget, images: bool) -> Result<Vec<EvalReport>, CliError> {
    match target {
        EvaluateTarget::Files {
            fixed,
            moving,
            moved,
            disp,
            gt,
            out,
            method,
        } => {
            let inputs = EvalInputs {
                fixed: read_volume(fixed, "fixed volume (--fixed)")?,
                moving: read_volume(moving, "moving volume (--moving)")?,
                moved: read_volume(moved, "registered volume (--moved)")?,
                disp: read_field(disp, "displacement field (--disp)")?,
                gt: match gt {
                    Some(g) => Some(read_field(g, "ground-truth field (--gt)")?),
                    None => None,
                },
            };
            let path = out.clone().unwrap_or_else(|| cfg.reports_dir().join("report.json"));
            let id = fixed
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let run = RunInfo {
                sample_id: id,
                method: *method,
                runtime_sec: 0.0,
            };
            Ok(vec![score(&inputs, run, &path, images)?])
        }
        EvaluateTarget::Workspace {
            selection,
            learned,
            baseline,
        } => {
            let manifest = load_manifest(cfg)?;
            let methods: Vec<Method> = [(Method::Learned, *learned), (Method::Baseline, *baseline)]
                .into_iter()
                .filter_map(|(m, on)| on.then_some(m))
                .collect();
            let only_one = methods.len() == 1;
            let mut reports = Vec::new();
            for s in select(&manifest, selection)? {
                let (fixed, moving) = read_pair(s)?;
                let gt = match &s.gt_disp_path {
                    Some(p) => Some(read_field(p, "ground-truth field")?),
                    None => None,
                };
                let mut inputs = EvalInputs {
                    fixed,
                    moving,
                    moved: ScalarVolume::zeros(voxcorr::Dims::cube(1), voxcorr::VoxelSize::iso(1.0)),
                    disp: DisplacementField::zeros(voxcorr::Dims::cube(1), voxcorr::VoxelSize::iso(1.0)),
                    gt,
                };
                for &m in &methods {
                    let moved_path = artifact(cfg, &s.id, m, "moved");
                    if !moved_path.exists() && !only_one {
                        continue;
                    }
                    let cmd = if m == Method::Learned { "register" } else { "baseline" };
                    inputs.moved = read_volume(&moved_path, &format!("{m} registration (run `{cmd}`)"))?;
                    inputs.disp = read_field(&artifact(cfg, &s.id, m, "disp"), &format!("{m} displacement field"))?;
                    let runtime_sec = read_json::<RunRecord>(&artifact(cfg, &s.id, m, "run"))
                        .map(|r| r.runtime_sec)
                        .unwrap_or(0.0);
                    let run = RunInfo {
                        sample_id: s.id.clone(),
                        method: m,
                        runtime_sec,
                    };
                    let path = cfg.reports_dir().join(format!("{}_{m}.json", s.id));
                    reports.push(score(&inputs, run, &path, images)?);
                }
            }
            if reports.is_empty() {
                return Err(CliError::MissingInput {
                    what: "registration results (run `register` or `baseline`)".into(),
                    path: cfg.registered_dir(),
                });
            }
            Ok(reports)
        }
    }
}

/// Human-readable description of a VVOL, checkpoint, manifest or report.
pub fn cmd_info(path: &Path) -> Result<String, CliError> {
    require(path, "file to inspect")?;
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let _ = f.read(&mut magic).map_err(|e| CliError::io(path, e))?;
    }
    let mut out = String::new();
    if magic == vvol::MAGIC {
        let h = vvol::read_header(path)?;
        out += &format!(
            "VVOL volume\n  dims      {}\n  channels  {}\n  dtype     {:?}\n  voxel     {} x {} x {} um\n  meta      {}\n",
            h.dims, h.channels, h.dtype, h.voxel_size.vx, h.voxel_size.vy, h.voxel_size.vz, h.meta
        );
        return Ok(out);
    }
    if &magic == b"VMCK" {
        let params = checkpoint_load(path)?;
        out += "VMCK checkpoint\n";
        out += &format!("  config  {}\n", serde_json::to_string(&params.config)?);
        let mut total = 0;
        for (name, conv) in params.names().iter().zip(&params.convs) {
            out += &format!(
                "  {name:<6} kernel [{}, {}, {k}, {k}, {k}]  bias [{}]\n",
                conv.cout,
                conv.cin,
                conv.cout,
                k = conv.k
            );
            total += conv.kernel.len() + conv.bias.len();
        }
        out += &format!("  parameters  {total}\n");
        return Ok(out);
    }
    let value: serde_json::Value = read_json(path)
        .map_err(|_| CliError::Validation(format!("{}: not a VVOL, VMCK or JSON file", path.display())))?;
    if value.get("samples").is_some() && value.get("target_dims").is_some() {
        let m = DatasetManifest::read(path)?;
        out += &format!("dataset manifest, target grid {}\n", m.target_dims);
        for s in &m.samples {
            out += &format!("  {:<16} C={:+.2}  {}\n", s.id, s.c_param, s.split);
        }
        return Ok(out);
    }
    if value.get("dice_after_pct").is_some() {
        let r: EvalReport = serde_json::from_value(value)?;
        return Ok(voxcorr::metrics::render_table(&[r]));
    }
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}
