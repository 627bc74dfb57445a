use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ManifoldSpec, Stage};
use super::output::{format_f64, write_csv, write_json};
use crate::charts::{
    check_chart_lipschitz, check_chart_respects_net, check_pairwise_closeness, isometry_defect, ChartSet, LocalChart,
};
use crate::correspondence::{oracle_correspondence, Correspondence, MapRegistry};
use crate::error::{GeomError, Result};
use crate::estimates::{check_dexp_transport, check_log_difference, check_rauch};
use crate::geometry::Geometry;
use crate::gluing::{
    audit_differential, injectivity_audit, measure_lipschitz, DifferentialAudit, GluedMap, InjectivityReport,
    LipschitzReport,
};
use crate::linalg::check_lemma_e_orthonormal;
use crate::manifold::registry::SurfaceRegistry;
use crate::manifold::{admissibility, rescale, AdmissibilityReport, Point};
use crate::margin::{BoundKind, MarginReport};
use crate::nets::{build_net, validate_net, Net, NetValidation};
use crate::partition::{check_partition, PartitionOfUnity, PartitionReport};
use crate::rng;

/// Largest number of weights at a point allowed for surfaces.
pub const OVERLAP_BOUND: usize = 49;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub cause: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSummary {
    pub points: usize,
    pub cached_pairs: usize,
    pub validation: NetValidation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSummary {
    pub map: String,
    pub distortion: f64,
    pub pairs_evaluated: usize,
    pub covering_defect: f64,
    pub covering_probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSummary {
    pub centers: Vec<usize>,
    pub max_e_orthonormality: f64,
    pub max_f_orthonormality: f64,
    /// Isometry defect of `L` in orthonormal frames.
    pub max_l_defect: f64,
    /// `dist_W(phi(e_k), f_k)`.
    pub max_basis_roundtrip: f64,
    pub respects_net: MarginReport,
    pub lipschitz: MarginReport,
    pub closeness: MarginReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub report: PartitionReport,
    pub overlap_bound: usize,
    pub overlap_within_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub delta: f64,
    pub epsilon: f64,
    pub admissibility_v: Option<AdmissibilityReport>,
    pub admissibility_w: Option<AdmissibilityReport>,
    /// Largest of the curvature scale of both surfaces, the distortion of the
    /// correspondence and its image covering defect.
    pub effective_delta: Option<f64>,
    pub stages: Vec<StageRecord>,
    pub net: Option<NetSummary>,
    pub correspondence: Option<CorrespondenceSummary>,
    pub charts: Option<ChartSummary>,
    pub partition: Option<PartitionSummary>,
    pub differential: Option<DifferentialAudit>,
    pub lipschitz: Option<LipschitzReport>,
    pub injectivity: Option<InjectivityReport>,
    pub lemmas: Vec<MarginReport>,
    /// Empirical constants: measured defects divided by their delta scale.
    pub constants: BTreeMap<String, f64>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn d_lip(&self) -> Option<f64> {
        self.lipschitz.as_ref().map(|l| l.d_lip)
    }
}

/// Seconds spent per stage, and whether cached intermediates were loaded.
/// Kept out of the report so that reports are reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    pub cache_hits: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub timings: Timings,
}

pub fn build_geometry(spec: &ManifoldSpec, config: &ExperimentConfig) -> Result<Geometry> {
    let mut surface = SurfaceRegistry::default().build(&spec.model, &spec.params)?;
    if spec.scale != 1.0 {
        surface = rescale(surface, spec.scale)?;
    }
    Ok(Geometry::new(surface, config.backend))
}

/// Selected stages together with everything they depend on, in pipeline order.
pub fn stage_closure(selected: &[Stage]) -> Vec<Stage> {
    let mut set: BTreeSet<Stage> = BTreeSet::new();
    let mut todo: Vec<Stage> = selected.to_vec();
    while let Some(s) = todo.pop() {
        if set.insert(s) {
            todo.extend_from_slice(s.requires());
        }
    }
    set.into_iter().collect()
}

struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    fn load<T: DeserializeOwned>(&self, name: &str, timings: &mut Timings) -> Option<T> {
        let path = self.dir.as_ref()?.join(name);
        let value = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
        timings.cache_hits.push(name.to_string());
        Some(value)
    }

    fn store<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if let Some(dir) = &self.dir {
            write_json(&dir.join(name), value)
                .map_err(|e| GeomError::InvalidParameter(format!("cache {name}: {e}")))?;
        }
        Ok(())
    }
}

struct State {
    v: Geometry,
    w: Geometry,
    net: Option<Net>,
    correspondence: Option<Correspondence>,
    cached_charts: Vec<LocalChart>,
}

/// Runs the selected stages (plus prerequisites) and, when `out` is given,
/// writes `report.json`, `summary.csv` and `timings.json` there, caching the
/// net, correspondence and charts under `out/cache/<config hash>`.
pub fn run(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    let hash = config.hash();
    let cache = Cache {
        dir: out.map(|o| o.join("cache").join(&hash)),
    };
    let mut timings = Timings::default();
    let eps = config.epsilon();
    let mut report = ExperimentReport {
        name: config.name.clone(),
        config_hash: hash,
        delta: config.delta,
        epsilon: eps,
        admissibility_v: None,
        admissibility_w: None,
        effective_delta: None,
        stages: Vec::new(),
        net: None,
        correspondence: None,
        charts: None,
        partition: None,
        differential: None,
        lipschitz: None,
        injectivity: None,
        lemmas: Vec::new(),
        constants: BTreeMap::new(),
        passed: false,
    };
    let mut state = State {
        v: build_geometry(&config.v, config)?,
        w: build_geometry(&config.w, config)?,
        net: None,
        correspondence: None,
        cached_charts: cache.load("charts.json", &mut timings).unwrap_or_default(),
    };
    let n = config.samples.admissibility;
    report.admissibility_v = Some(admissibility(state.v.surface(), config.delta, n, config.seeds.trials)?);
    report.admissibility_w = Some(admissibility(state.w.surface(), config.delta, n, config.seeds.trials)?);

    let mut outcome: BTreeMap<Stage, StageStatus> = BTreeMap::new();
    for stage in stage_closure(&config.stages) {
        let blocked = stage
            .requires()
            .iter()
            .find(|p| outcome.get(p) != Some(&StageStatus::Passed));
        let record = if let Some(p) = blocked {
            StageRecord {
                stage,
                status: StageStatus::Skipped,
                cause: Some(format!("prerequisite `{}` did not pass", p.name())),
            }
        } else {
            let start = Instant::now();
            let result = run_stage(stage, config, &cache, &mut timings, &mut state, &mut report);
            timings
                .stages
                .insert(stage.name().to_string(), start.elapsed().as_secs_f64());
            match result {
                Ok(None) => StageRecord {
                    stage,
                    status: StageStatus::Passed,
                    cause: None,
                },
                Ok(Some(why)) => StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    cause: Some(why),
                },
                Err(e) => StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    cause: Some(e.to_string()),
                },
            }
        };
        outcome.insert(stage, record.status);
        report.stages.push(record);
    }
    report.effective_delta = effective_delta(&report);
    report.constants = constants(&report);
    report.passed = report.stages.iter().all(|r| r.status == StageStatus::Passed);

    if let Some(dir) = out {
        let io = |e: std::io::Error| GeomError::InvalidParameter(format!("writing {}: {e}", dir.display()));
        write_json(&dir.join("report.json"), &report).map_err(io)?;
        write_json(&dir.join("timings.json"), &timings).map_err(io)?;
        write_csv(&dir.join("summary.csv"), &["metric", "value"], &summary_rows(&report)).map_err(io)?;
    }
    Ok(RunOutput { report, timings })
}

/// `Ok(Some(reason))` when the stage ran but failed its assertions.
fn run_stage(
    stage: Stage,
    config: &ExperimentConfig,
    cache: &Cache,
    timings: &mut Timings,
    state: &mut State,
    report: &mut ExperimentReport,
) -> Result<Option<String>> {
    let eps = config.epsilon();
    let samples = &config.samples;
    let seeds = config.seeds;
    match stage {
        Stage::Net => {
            let net = match cache.load::<Net>("net.json", timings) {
                Some(net) => net,
                None => {
                    let net = build_net(&state.v, eps, seeds.net, &config.net)?;
                    cache.store("net.json", &net)?;
                    net
                }
            };
            let validation = validate_net(&state.v, &net, samples.net_probes, seeds.sampling)?;
            report.net = Some(NetSummary {
                points: net.len(),
                cached_pairs: net.pairs.len(),
                validation,
            });
            state.net = Some(net);
            let tol = 1e-9 * eps;
            if validation.separation < eps - tol {
                return Ok(Some(format!("separation {} below eps", validation.separation)));
            }
            if validation.covering_radius > eps * (1.0 + 1e-3) {
                return Ok(Some(format!(
                    "sampled covering radius {} above eps",
                    validation.covering_radius
                )));
            }
            Ok(None)
        }
        Stage::Correspondence => {
            let net = state.net.as_ref().expect("net stage ran");
            let c = match cache.load::<Correspondence>("correspondence.json", timings) {
                Some(c) => c,
                None => {
                    let spec = &config.correspondence;
                    let map = MapRegistry::default().build(&spec.map, &spec.params)?;
                    let c = oracle_correspondence(
                        map.as_ref(),
                        &state.v,
                        &state.w,
                        net,
                        spec.max_pairs,
                        samples.image_probes,
                        seeds.sampling,
                    )?;
                    cache.store("correspondence.json", &c)?;
                    c
                }
            };
            report.correspondence = Some(CorrespondenceSummary {
                map: c.map.clone(),
                distortion: c.distortion,
                pairs_evaluated: c.pairs_evaluated,
                covering_defect: c.covering_defect,
                covering_probes: c.covering_probes,
            });
            let bad = !c.distortion.is_finite() || !c.covering_defect.is_finite();
            state.correspondence = Some(c);
            Ok(bad.then(|| "correspondence distortion or image covering is not finite".to_string()))
        }
        Stage::Charts => {
            let (net, images) = net_and_images(state);
            let charts = ChartSet::new(&state.v, &state.w, net, images);
            charts.preload(state.cached_charts.clone());
            let checked = chart_checks(&charts, config);
            let built = charts.built();
            remember_charts(state, built, cache)?;
            let summary = checked?;
            let mut failures = Vec::new();
            for r in [&summary.respects_net, &summary.lipschitz, &summary.closeness] {
                if !r.passed() {
                    failures.push(format!("{} worst ratio {}", r.check, r.worst_ratio));
                }
            }
            if summary.max_basis_roundtrip > 1e-8 {
                failures.push(format!("phi(e_k) misses f_k by {}", summary.max_basis_roundtrip));
            }
            report.charts = Some(summary);
            Ok((!failures.is_empty()).then(|| failures.join("; ")))
        }
        Stage::Partition => {
            let net = state.net.as_ref().expect("net stage ran");
            let pou = PartitionOfUnity::new(&state.v, net);
            let r = check_partition(&state.v, &pou, samples.partition_probes, seeds.sampling)?;
            let ok = r.passed(usize::MAX);
            report.partition = Some(PartitionSummary {
                overlap_within_bound: r.max_overlap <= OVERLAP_BOUND,
                report: r,
                overlap_bound: OVERLAP_BOUND,
            });
            Ok((!ok).then(|| "partition invariants violated".to_string()))
        }
        Stage::Glue | Stage::Measure => {
            let (verdict, built) = {
                let (net, images) = net_and_images(state);
                let charts = ChartSet::new(&state.v, &state.w, net, images);
                charts.preload(state.cached_charts.clone());
                let pou = PartitionOfUnity::new(&state.v, net);
                let mut gm = GluedMap::new(&charts, &pou, config.delta);
                gm.settings = config.karcher;
                let verdict = if stage == Stage::Glue {
                    let audit = audit_differential(&gm, samples.differential_points, seeds.sampling);
                    let verdict = (!audit.passed()).then(|| {
                        format!(
                            "differential audit: fd gap {}, min eigenvalue {}, {} failures",
                            audit.max_fd_gap,
                            audit.min_star_eigenvalue,
                            audit.failures.len()
                        )
                    });
                    report.differential = Some(audit);
                    verdict
                } else {
                    let lip = measure_lipschitz(
                        &gm,
                        samples.lipschitz_pairs,
                        samples.max_pair_distance,
                        samples.lipschitz_differentials,
                        seeds.sampling,
                    );
                    let lower = lip.min_ratio.min(1.0);
                    let inj = injectivity_audit(
                        &gm,
                        samples.injectivity_samples,
                        samples.surjectivity_targets,
                        samples.audit_radius,
                        lower,
                        seeds.sampling,
                    );
                    let mut failures = Vec::new();
                    if !lip.failures.is_empty() || !lip.d_lip.is_finite() {
                        failures.push(format!("{} Lipschitz evaluations failed", lip.failures.len()));
                    }
                    if !inj.passed() {
                        failures.push(format!(
                            "injectivity audit: {} collisions, {} uncovered targets, {} failures",
                            inj.collisions,
                            inj.uncovered_targets,
                            inj.failures.len()
                        ));
                    }
                    report.lipschitz = Some(lip);
                    report.injectivity = Some(inj);
                    (!failures.is_empty()).then(|| failures.join("; "))
                };
                (verdict, charts.built())
            };
            remember_charts(state, built, cache)?;
            Ok(verdict)
        }
        Stage::VerifyLemmas => {
            let mut lemmas = Vec::new();
            for (label, g) in [("v", &state.v), ("w", &state.w)] {
                for mut r in [
                    check_rauch(g, config.delta, samples.lemma_trials, seeds.trials),
                    check_dexp_transport(g, config.delta, samples.lemma_trials, seeds.trials),
                    check_log_difference(g, config.delta, samples.lemma_trials, seeds.trials),
                ] {
                    r.check = format!("{label}/{}", r.check);
                    lemmas.push(r);
                }
            }
            for n in [2, 3] {
                let r = check_lemma_e_orthonormal(
                    samples.lemma_trials,
                    n,
                    samples.lemma_eps,
                    samples.lemma_delta,
                    seeds.trials,
                )?;
                for mut m in [r.norm_bound, r.isometry_bound] {
                    m.check = format!("{}/n{n}", m.check);
                    lemmas.push(m);
                }
            }
            let failed: Vec<String> = lemmas.iter().filter(|m| !m.passed()).map(|m| m.check.clone()).collect();
            report.lemmas = lemmas;
            Ok((!failed.is_empty()).then(|| format!("failed: {}", failed.join(", "))))
        }
    }
}

fn net_and_images(state: &State) -> (&Net, &[Point]) {
    let net = state.net.as_ref().expect("net stage ran");
    let images = &state.correspondence.as_ref().expect("correspondence stage ran").images;
    (net, images)
}

fn remember_charts(state: &mut State, built: Vec<LocalChart>, cache: &Cache) -> Result<()> {
    if built.len() > state.cached_charts.len() {
        state.cached_charts = built;
        cache.store("charts.json", &state.cached_charts)?;
    }
    Ok(())
}

fn chart_checks(charts: &ChartSet, config: &ExperimentConfig) -> Result<ChartSummary> {
    let (gv, gw) = (charts.v, charts.w);
    let net = charts.net;
    let delta = config.delta;
    let samples = &config.samples;
    let mut r = rng::stream(config.seeds.sampling, "chart_centers", 0);
    let mut centers: Vec<usize> = sample(&mut r, net.len(), samples.chart_centers.min(net.len())).into_vec();
    centers.sort_unstable();
    let neighbours = net.neighbours();
    let mut summary = ChartSummary {
        centers: centers.clone(),
        max_e_orthonormality: 0.0,
        max_f_orthonormality: 0.0,
        max_l_defect: 0.0,
        max_basis_roundtrip: 0.0,
        respects_net: MarginReport::new("chart_respects_net", BoundKind::Empirical),
        lipschitz: MarginReport::new("chart_lipschitz", BoundKind::Empirical),
        closeness: MarginReport::new("chart_closeness", BoundKind::Empirical),
    };
    for &c in &centers {
        let chart = charts.get(c)?;
        summary.max_e_orthonormality = summary.max_e_orthonormality.max(chart.e_orthonormality);
        summary.max_f_orthonormality = summary.max_f_orthonormality.max(chart.f_orthonormality);
        summary.max_l_defect = summary.max_l_defect.max(isometry_defect(&chart.l));
        for &k in &chart.basis_points {
            let y = chart.apply(gv, gw, &net.points[k])?;
            summary.max_basis_roundtrip = summary.max_basis_roundtrip.max(gw.dist(&y, &charts.images[k])?);
        }
        let respects = check_chart_respects_net(charts, chart, &neighbours[c], delta, 2.0)?;
        summary.respects_net.absorb(&respects);
        let lip = check_chart_lipschitz(charts, chart, delta, samples.chart_samples, config.seeds.sampling)?;
        summary.lipschitz.absorb(&lip);
        let overlapping = neighbours[c]
            .iter()
            .filter(|&&(j, d)| j != c && d < chart.radius())
            .take(samples.closeness_neighbours);
        for &(j, _) in overlapping {
            let other = charts.get(j)?;
            let close = check_pairwise_closeness(
                charts,
                chart,
                other,
                delta,
                samples.chart_samples,
                config.seeds.sampling,
            )?;
            summary.closeness.absorb(&close);
        }
    }
    Ok(summary)
}

fn effective_delta(report: &ExperimentReport) -> Option<f64> {
    let c = report.correspondence.as_ref()?;
    let mut d = c.distortion.max(c.covering_defect);
    for a in [&report.admissibility_v, &report.admissibility_w].into_iter().flatten() {
        d = d.max(a.max_abs_curvature).max(1.0 / a.injectivity_radius);
    }
    Some(d)
}

fn constants(report: &ExperimentReport) -> BTreeMap<String, f64> {
    let delta = report.delta;
    let eps = report.epsilon;
    let mut out = BTreeMap::new();
    if let Some(c) = &report.correspondence {
        out.insert("correspondence_distortion_over_delta".into(), c.distortion / delta);
    }
    if let Some(c) = &report.charts {
        out.insert("chart_respects_net".into(), c.respects_net.worst_ratio);
        out.insert("chart_lipschitz".into(), c.lipschitz.worst_ratio);
        out.insert("chart_closeness".into(), c.closeness.worst_ratio);
        out.insert("basis_f_orthonormality_over_eps".into(), c.max_f_orthonormality / eps);
        out.insert("l_defect_over_delta".into(), c.max_l_defect / delta);
    }
    if let Some(p) = &report.partition {
        out.insert("partition_gradient_times_eps".into(), p.report.max_scaled_gradient);
    }
    if let Some(d) = &report.differential {
        out.insert("star_constant".into(), d.star_constant);
    }
    if let Some(l) = &report.lipschitz {
        out.insert("d_lip_over_eps".into(), l.d_lip / eps);
        out.insert("differential_defect_over_eps".into(), l.max_differential_defect / eps);
    }
    for m in &report.lemmas {
        out.insert(format!("lemma/{}", m.check), m.worst_ratio);
    }
    out
}

fn summary_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = vec![
        vec!["delta".into(), format_f64(report.delta)],
        vec!["epsilon".into(), format_f64(report.epsilon)],
    ];
    if let Some(d) = report.effective_delta {
        rows.push(vec!["effective_delta".into(), format_f64(d)]);
    }
    for s in &report.stages {
        let status = match s.status {
            StageStatus::Passed => "passed",
            StageStatus::Failed => "failed",
            StageStatus::Skipped => "skipped",
        };
        rows.push(vec![format!("stage/{}", s.stage.name()), status.into()]);
    }
    if let Some(n) = &report.net {
        rows.push(vec!["net/points".into(), n.points.to_string()]);
        rows.push(vec![
            "net/covering_radius".into(),
            format_f64(n.validation.covering_radius),
        ]);
    }
    if let Some(l) = &report.lipschitz {
        rows.push(vec!["d_lip".into(), format_f64(l.d_lip)]);
        rows.push(vec!["max_ratio".into(), format_f64(l.max_ratio)]);
        rows.push(vec!["min_ratio".into(), format_f64(l.min_ratio)]);
        rows.push(vec![
            "max_differential_defect".into(),
            format_f64(l.max_differential_defect),
        ]);
    }
    if let Some(i) = &report.injectivity {
        rows.push(vec!["injectivity/collisions".into(), i.collisions.to_string()]);
        rows.push(vec![
            "injectivity/uncovered_targets".into(),
            i.uncovered_targets.to_string(),
        ]);
    }
    if let Some(d) = &report.differential {
        rows.push(vec!["differential/max_fd_gap".into(), format_f64(d.max_fd_gap)]);
        rows.push(vec![
            "differential/min_star_eigenvalue".into(),
            format_f64(d.min_star_eigenvalue),
        ]);
    }
    for (k, v) in &report.constants {
        rows.push(vec![format!("constant/{k}"), format_f64(*v)]);
    }
    rows
}
