use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mechanism_id, Run};
use crate::error::{Error, Result};
use crate::game::{LiberalEgalitarian, Mechanism, SessionRecord, TAIL_ENDOWMENTS};
use crate::mechanism::{export_policy_heatmap, PolicyHeatmap};
use crate::metagame::MetaGameMatrix;
use crate::participant::{crossval_matrix, CrossValMatrices, ParticipantModel};

/// Head share below which a heatmap cell counts as withholding.
pub const HEATMAP_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    /// Files written, relative to the output directory.
    pub written: Vec<String>,
    /// Artifacts that could not be read.
    pub missing: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct HeatmapRow<'a> {
    mechanism: &'a str,
    low_share_fraction: f64,
    cells: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct HeatmapPanel<'a> {
    tail_endowment: u32,
    rows: Vec<HeatmapRow<'a>>,
}

#[derive(Serialize)]
struct HeatmapDocument<'a> {
    threshold: f64,
    panels: Vec<HeatmapPanel<'a>>,
}

#[derive(Serialize)]
struct CrossValDocument<'a> {
    datasets: Vec<String>,
    #[serde(flatten)]
    matrices: &'a CrossValMatrices,
}

/// Writes plot-ready files for the run into `out`:
///
/// - `heatmaps/tail-T.tsv` and `heatmaps.json`: the head-share grid of θ0,
///   every trained iteration and Liberal Egalitarian, per tail endowment;
/// - `heatmap-trend.tsv`: fraction of withholding cells per mechanism;
/// - `metagame.tsv`, `metagame.json`: the latest meta-game matrix;
/// - `crossval-contribution.tsv`, `crossval-vote.tsv`, `crossval.json`.
///
/// Unreadable artifacts are listed in the report and skipped. Output depends
/// only on the run's artifacts, so exporting twice gives identical files.
pub fn export_figures(run: &Run, out: &Path) -> Result<ExportReport> {
    let mut report = ExportReport::default();
    let manifest = run.manifest();
    if manifest.iterations.is_empty() {
        report
            .warnings
            .push("manifest has no iterations; nothing to export".into());
        return Ok(report);
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut mechanisms: Vec<Box<dyn Mechanism>> = Vec::new();
    for s in std::iter::once(0).chain(manifest.iterations.iter().filter(|r| r.optimize.is_some()).map(|r| r.iteration)) {
        match run.mechanism(s) {
            Ok(m) => mechanisms.push(Box::new(m)),
            Err(e) => report.missing.push(format!("{}: {e}", mechanism_id(s))),
        }
    }
    mechanisms.push(Box::new(LiberalEgalitarian));
    write_heatmaps(&mechanisms, out, &mut report)?;

    match latest_metagame(run) {
        Ok(Some(matrix)) => {
            write(out, "metagame.tsv", &matrix.to_tsv(), &mut report)?;
            write(out, "metagame.json", &to_json(&matrix)?, &mut report)?;
        }
        Ok(None) => report.warnings.push("no meta-game matrix yet".into()),
        Err(e) => report.missing.push(format!("meta-game matrix: {e}")),
    }

    write_crossval(run, out, &mut report)?;
    Ok(report)
}

fn write_heatmaps(mechanisms: &[Box<dyn Mechanism>], out: &Path, report: &mut ExportReport) -> Result<()> {
    let maps: Vec<Vec<PolicyHeatmap>> = TAIL_ENDOWMENTS
        .iter()
        .map(|t| mechanisms.iter().map(|m| export_policy_heatmap(m.as_ref(), *t)).collect())
        .collect();
    let mut trend = String::from("mechanism");
    for t in TAIL_ENDOWMENTS {
        let _ = write!(trend, "\ttail-{t}");
    }
    trend.push_str("\tmean\n");
    for (k, m) in mechanisms.iter().enumerate() {
        trend.push_str(m.id());
        let fractions: Vec<f64> = maps.iter().map(|panel| panel[k].low_share_fraction(HEATMAP_THRESHOLD)).collect();
        for f in &fractions {
            let _ = write!(trend, "\t{f:.6}");
        }
        let _ = writeln!(trend, "\t{:.6}", fractions.iter().sum::<f64>() / fractions.len() as f64);
    }
    for (t, panel) in TAIL_ENDOWMENTS.iter().zip(&maps) {
        let mut tsv = String::from("mechanism\thead\ttail\thead_share\n");
        for map in panel {
            for (h, row) in map.cells.iter().enumerate() {
                for (c, x) in row.iter().enumerate() {
                    let _ = writeln!(tsv, "{}\t{h}\t{c}\t{x:.6}", map.mechanism_id);
                }
            }
        }
        write(out, &format!("heatmaps/tail-{t}.tsv"), &tsv, report)?;
    }
    let doc = HeatmapDocument {
        threshold: HEATMAP_THRESHOLD,
        panels: TAIL_ENDOWMENTS
            .iter()
            .zip(&maps)
            .map(|(t, panel)| HeatmapPanel {
                tail_endowment: *t,
                rows: panel
                    .iter()
                    .map(|m| HeatmapRow {
                        mechanism: &m.mechanism_id,
                        low_share_fraction: m.low_share_fraction(HEATMAP_THRESHOLD),
                        cells: &m.cells,
                    })
                    .collect(),
            })
            .collect(),
    };
    write(out, "heatmaps.json", &to_json(&doc)?, report)?;
    write(out, "heatmap-trend.tsv", &trend, report)
}

fn latest_metagame(run: &Run) -> Result<Option<MetaGameMatrix>> {
    let Some(record) = run.manifest().iterations.iter().rev().find_map(|r| r.metagame.as_ref()) else {
        return Ok(None);
    };
    Ok(Some(serde_json::from_slice(&record.matrix.read(run.root())?)?))
}

fn write_crossval(run: &Run, out: &Path, report: &mut ExportReport) -> Result<()> {
    let mut models: Vec<ParticipantModel> = Vec::new();
    let mut datasets = Vec::new();
    let mut ids = Vec::new();
    for r in run.manifest().iterations.iter().filter(|r| r.model.is_some()) {
        match (run.participant_model(r.iteration), run.dataset(r.iteration)) {
            (Ok(m), Ok(d)) => {
                models.push(m);
                datasets.push(d);
                ids.push(super::dataset_id(r.iteration));
            }
            (Err(e), _) | (_, Err(e)) => report.missing.push(format!("iteration {}: {e}", r.iteration)),
        }
    }
    if models.is_empty() {
        report.warnings.push("no participant models yet".into());
        return Ok(());
    }
    let include_bots = run.config().model.include_bot_seats;
    let refs: Vec<Vec<&SessionRecord>> = datasets
        .iter()
        .map(|d| d.training_sessions(include_bots).collect())
        .collect();
    let cv = crossval_matrix(&models, &refs)?;
    write(out, "crossval-contribution.tsv", &matrix_tsv(&ids, &cv.contribution), report)?;
    write(out, "crossval-vote.tsv", &matrix_tsv(&ids, &cv.vote), report)?;
    let doc = CrossValDocument {
        datasets: ids,
        matrices: &cv,
    };
    write(out, "crossval.json", &to_json(&doc)?, report)
}

/// Rows are models, columns datasets.
fn matrix_tsv(ids: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("model\\dataset");
    for id in ids {
        let _ = write!(out, "\t{id}");
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(m) {
        let _ = write!(out, "{id}");
        for x in row {
            let _ = write!(out, "\t{x:.6}");
        }
        out.push('\n');
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write(out: &Path, rel: &str, text: &str, report: &mut ExportReport) -> Result<()> {
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    report.written.push(rel.to_string());
    Ok(())
}
