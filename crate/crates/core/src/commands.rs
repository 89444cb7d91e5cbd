//! File-level batch commands behind the command-line tool.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{error, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{
    gps_nearest_correspondence, parse_manifest, read_dpt, read_label_png, read_mask_png,
    read_match_file, read_rgb, read_spm, write_label_png, write_spm, CorrespondenceTable,
    ManifestRecord, Role,
};
use crate::error::{Error, Result};
use crate::geometry::MatchSet;
use crate::refine::{refine_prediction, RefineConfig, RefineInputs};
use crate::types::{validate_soft_map, ClassCatalog, HardLabelMap, InvalidMask, SoftPredictionMap};
use crate::uiou::{default_theta_grid, tally, threshold_to_hard, uiou_curve, uiou_score, TallyTable, UiouCurve, UiouScore};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `dark_id,day_id,distance_m` for every dark record.
pub fn cmd_match(dark_manifest: &Path, day_manifest: &Path, out: &Path) -> Result<CorrespondenceTable> {
    let dark = parse_manifest(dark_manifest)?;
    let day = parse_manifest(day_manifest)?;
    let foreign = day.iter().filter(|r| r.role != Role::Day).count();
    if foreign > 0 {
        warn!("{foreign} reference records are not daytime");
    }
    let table = gps_nearest_correspondence(&dark, &day)?;
    table.write_csv(create(out)?)?;
    info!("wrote {} correspondences to {}", table.entries.len(), out.display());
    Ok(table)
}

fn index(records: Vec<ManifestRecord>) -> HashMap<String, ManifestRecord> {
    records.into_iter().map(|r| (r.id.clone(), r)).collect()
}

fn require<'a>(path: &'a Option<PathBuf>, id: &str, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidValue(format!("record {id:?} has no {what}")))
}

fn load_soft(path: &Path, catalog: &ClassCatalog) -> Result<SoftPredictionMap> {
    validate_soft_map(&read_spm(path)?, catalog)
}

#[derive(Clone, Debug)]
pub struct RefineCommand {
    pub correspondences: PathBuf,
    pub dark_manifest: PathBuf,
    pub day_manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Directory of `<dark_id>.txt` match files; pairs without one detect
    /// their own matches.
    pub matches_dir: Option<PathBuf>,
    pub config: RefineConfig,
    pub max_depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineRow {
    pub dark_id: String,
    pub day_id: String,
    /// `bilateral`, `warp`, or empty when the pair failed.
    pub mode: String,
    pub inlier_count: Option<usize>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineSummary {
    pub rows: Vec<RefineRow>,
    pub failures: usize,
}

fn refine_pair(
    cmd: &RefineCommand,
    catalog: &ClassCatalog,
    dark: &ManifestRecord,
    day: &ManifestRecord,
) -> Result<(String, Option<usize>)> {
    let s_dark = load_soft(require(&dark.paths.soft_map, &dark.id, "soft_map")?, catalog)?;
    let s_day = load_soft(require(&day.paths.soft_map, &day.id, "soft_map")?, catalog)?;
    let img_dark = read_rgb(&dark.paths.image)?;
    let img_day = read_rgb(&day.paths.image)?;
    let depth = day.paths.depth.as_deref().map(|p| read_dpt(p, cmd.max_depth)).transpose()?;
    let cameras = day.camera.zip(dark.camera);
    let matches: Option<MatchSet> = match &cmd.matches_dir {
        Some(dir) => {
            let p = dir.join(format!("{}.txt", dark.id));
            p.exists().then(|| read_match_file(&p)).transpose()?
        }
        None => None,
    };
    let inputs = RefineInputs {
        s_dark: &s_dark,
        img_dark: &img_dark,
        s_day: &s_day,
        img_day: &img_day,
        depth_day: depth.as_ref(),
        cameras,
        matches: matches.as_ref(),
        motion: None,
    };
    let refined = refine_prediction(&inputs, &cmd.config, catalog)?;
    write_spm(&cmd.out_dir.join(format!("{}.spm", dark.id)), &refined.soft.to_raw())?;
    write_label_png(&cmd.out_dir.join(format!("{}_labels.png", dark.id)), &refined.labels)?;
    Ok((refined.report.mode.as_str().to_string(), refined.report.inlier_count))
}

/// Refines every pair of the correspondence table. Pairs are independent; a
/// failing pair is logged and reported, and the others still run. Writes
/// `<dark_id>.spm`, `<dark_id>_labels.png` and `report.csv` to `out_dir`.
pub fn cmd_refine(cmd: &RefineCommand, catalog: &ClassCatalog) -> Result<RefineSummary> {
    cmd.config.validate()?;
    let table = CorrespondenceTable::read_csv(File::open(&cmd.correspondences).map_err(|e| Error::io(&cmd.correspondences, e))?)?;
    let dark = index(parse_manifest(&cmd.dark_manifest)?);
    let day = index(parse_manifest(&cmd.day_manifest)?);
    std::fs::create_dir_all(&cmd.out_dir).map_err(|e| Error::io(&cmd.out_dir, e))?;

    let rows: Vec<RefineRow> = table
        .entries
        .par_iter()
        .map(|c| {
            let result = match (dark.get(&c.dark_id), day.get(&c.day_id)) {
                (Some(d), Some(r)) => refine_pair(cmd, catalog, d, r),
                (None, _) => Err(Error::InvalidValue(format!("unknown dark id {:?}", c.dark_id))),
                (_, None) => Err(Error::InvalidValue(format!("unknown day id {:?}", c.day_id))),
            };
            let (mode, inlier_count, status) = match result {
                Ok((mode, n)) => (mode, n, "ok".to_string()),
                Err(e) => {
                    error!("pair {} / {}: {e}", c.dark_id, c.day_id);
                    (String::new(), None, e.to_string())
                }
            };
            RefineRow {
                dark_id: c.dark_id.clone(),
                day_id: c.day_id.clone(),
                mode,
                inlier_count,
                status,
            }
        })
        .collect();

    let mut w = csv::Writer::from_writer(create(&cmd.out_dir.join("report.csv"))?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&cmd.out_dir, e))?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    Ok(RefineSummary { rows, failures })
}

/// Predictions paired with ground truth by record id.
struct Corpus {
    preds: Vec<SoftPredictionMap>,
    gts: Vec<HardLabelMap>,
    masks: Vec<InvalidMask>,
    failures: Vec<(String, String)>,
}

fn load_corpus(pred_manifest: &Path, gt_manifest: &Path, catalog: &ClassCatalog) -> Result<Corpus> {
    let preds = parse_manifest(pred_manifest)?;
    let gts = index(parse_manifest(gt_manifest)?);
    let loaded: Vec<(String, Result<(SoftPredictionMap, HardLabelMap, InvalidMask)>)> = preds
        .par_iter()
        .map(|p| {
            let item = (|| {
                let g = gts
                    .get(&p.id)
                    .ok_or_else(|| Error::InvalidValue(format!("no ground truth for {:?}", p.id)))?;
                let s = load_soft(require(&p.paths.soft_map, &p.id, "soft_map")?, catalog)?;
                let gt = read_label_png(require(&g.paths.gt_label, &g.id, "gt_label")?, catalog)?;
                let mask = match &g.paths.invalid_mask {
                    Some(m) => read_mask_png(m)?,
                    None => InvalidMask::all_valid(gt.height(), gt.width()),
                };
                if s.dims() != gt.dims() {
                    return Err(Error::dims(s.dims(), gt.dims()));
                }
                if mask.dims() != gt.dims() {
                    return Err(Error::dims(mask.dims(), gt.dims()));
                }
                Ok((s, gt, mask))
            })();
            (p.id.clone(), item)
        })
        .collect();
    let mut corpus = Corpus {
        preds: Vec::new(),
        gts: Vec::new(),
        masks: Vec::new(),
        failures: Vec::new(),
    };
    for (id, item) in loaded {
        match item {
            Ok((s, g, m)) => {
                corpus.preds.push(s);
                corpus.gts.push(g);
                corpus.masks.push(m);
            }
            Err(e) => {
                error!("{id}: {e}");
                corpus.failures.push((id, e.to_string()));
            }
        }
    }
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateSummary {
    pub theta: f64,
    pub tally: TallyTable,
    pub score: UiouScore,
    pub failures: Vec<(String, String)>,
}

impl EvaluateSummary {
    /// `class,uiou,tp,fp,fn,ti,fi` per class, then a `mean` row.
    pub fn write_csv(&self, names: &[String], out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "uiou", "tp", "fp", "fn", "ti", "fi"])?;
        for ((name, t), s) in names.iter().zip(self.tally.classes()).zip(&self.score.per_class) {
            w.write_record([
                name.clone(),
                s.map(|v| format!("{v:.9}")).unwrap_or_default(),
                t.tp.to_string(),
                t.fp.to_string(),
                t.fn_.to_string(),
                t.ti.to_string(),
                t.fi.to_string(),
            ])?;
        }
        let mean = self.score.mean.map(|v| format!("{v:.9}")).unwrap_or_default();
        w.write_record(["mean", mean.as_str(), "", "", "", "", ""])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Scores predictions at one threshold, `1/C` when omitted.
pub fn cmd_evaluate(
    pred_manifest: &Path,
    gt_manifest: &Path,
    theta: Option<f64>,
    catalog: &ClassCatalog,
    out: Option<&Path>,
) -> Result<EvaluateSummary> {
    let theta = theta.unwrap_or_else(|| catalog.min_theta());
    let corpus = load_corpus(pred_manifest, gt_manifest, catalog)?;
    let tables = corpus
        .preds
        .par_iter()
        .zip(&corpus.gts)
        .zip(&corpus.masks)
        .map(|((s, g), m)| tally(&threshold_to_hard(s, theta, catalog)?, g, m, catalog))
        .collect::<Result<Vec<_>>>()?;
    let total = tables.into_iter().fold(TallyTable::zeros(catalog.num_classes()), |a, b| a + b);
    let summary = EvaluateSummary {
        theta,
        score: uiou_score(&total),
        tally: total,
        failures: corpus.failures,
    };
    if let Some(path) = out {
        summary.write_csv(catalog.names(), create(path)?)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSummary {
    pub curve: UiouCurve,
    pub failures: Vec<(String, String)>,
}

/// Scores predictions over `grid_size` thresholds from `1/C` to 1 and writes
/// the curve CSV.
pub fn cmd_curve(
    pred_manifest: &Path,
    gt_manifest: &Path,
    grid_size: usize,
    catalog: &ClassCatalog,
    out: &Path,
) -> Result<CurveSummary> {
    if grid_size < 2 {
        return Err(Error::InvalidValue(format!("grid size {grid_size} < 2")));
    }
    let corpus = load_corpus(pred_manifest, gt_manifest, catalog)?;
    let grid = default_theta_grid(catalog.num_classes(), grid_size);
    let curve = uiou_curve(&corpus.preds, &corpus.gts, &corpus.masks, &grid, catalog)?;
    curve.write_csv(create(out)?)?;
    Ok(CurveSummary {
        curve,
        failures: corpus.failures,
    })
}
