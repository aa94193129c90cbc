use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{PipelineConfig, WorkloadConfig, WorkloadMode};
use super::*;
use crate::artifact::{load_jsonl, save_jsonl, Header, Link};
use crate::encoder::{build_layout, encode_batch, load_matrix, save_matrix, EncodedBatch, FeatureMatrix, MATRIX_KIND};
use crate::eval::{
    self, mse_log, render_table, stratified_mse, uncertainty_error_report, write_scatter_csv, ALState, QuantileSummary,
};
use crate::gp::{self, confidence_interval, normal_quantile, TrainedEstimator, MODEL_KIND};
use crate::kernel::montecarlo::{mc_erf, mc_relu};
use crate::kernel::{base_kernel, erf_kernel_step, nngp_kernel, relu_layer_step};
use crate::oracle::{execute_batch, Query, QueryRecord};
use crate::relstore::synth::{presets, synthesize, SynthSpec};
use crate::relstore::{export_csv, CatalogFile, ColumnKind, RelationSource, SchemaCatalog};
use crate::workload::{self, finalize, gen_join, gen_single_relation, JoinGenOptions, SplitMetadata};

const QUERIES_KIND: &str = "queries";
const WORKLOAD_KIND: &str = "workload";
const PREDICTIONS_KIND: &str = "predictions";

/// One line of `predict` output. `ci_low`/`ci_high` bound the log
/// cardinality; `cov` is null when infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub query_id: u64,
    pub card_estimate: f64,
    pub mean_log: f64,
    pub var_log: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub cov: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u64>,
    pub n_conditions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub header: Header,
    pub n: usize,
    pub mse_log: f64,
    pub stratified_mse: BTreeMap<usize, f64>,
    pub spearman: Option<f64>,
    pub q_error: Option<QuantileSummary>,
    pub q_error_strata: BTreeMap<usize, QuantileSummary>,
}

fn emit(out: &mut impl Write, v: serde_json::Value) -> Result<()> {
    writeln!(out, "{v}")?;
    Ok(())
}

fn write_json_pretty<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn load_catalog(path: &Path) -> Result<(SchemaCatalog, String)> {
    let c = SchemaCatalog::load(path)?;
    let h = c.content_hash();
    Ok((c, h))
}

fn expect_kinds(h: &Header, kinds: &[&str]) -> Result<()> {
    let kind = kinds.iter().find(|k| **k == h.kind).unwrap_or(&kinds[0]);
    h.expect_kind(kind)
}

/// Upstream chain of a catalog-derived input. Headerless files (hand
/// written queries) are rooted at the catalog directly.
fn chain_for(h: Option<&Header>, catalog_hash: &str) -> Result<Vec<Link>> {
    match h {
        None => Ok(Header::catalog_root(catalog_hash)),
        Some(h) => {
            check_catalog(h, catalog_hash)?;
            Ok(h.chain.clone())
        }
    }
}

fn check_catalog(h: &Header, catalog_hash: &str) -> Result<()> {
    match h.catalog_hash() {
        Some(got) if got == catalog_hash => Ok(()),
        got => Err(Error::HashMismatch {
            what: "catalog",
            expected: catalog_hash.to_string(),
            got: got.unwrap_or("none").to_string(),
        }),
    }
}

fn same_catalog(a: &Header, b: &Header) -> Result<()> {
    match (a.catalog_hash(), b.catalog_hash()) {
        (Some(x), Some(y)) if x != y => Err(Error::HashMismatch {
            what: "catalog",
            expected: x.to_string(),
            got: y.to_string(),
        }),
        _ => Ok(()),
    }
}

fn level_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub(super) fn synth(cfg: &PipelineConfig, a: SynthArgs, out: &mut impl Write) -> Result<()> {
    let spec: SynthSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(format!("{}: {e}", p.display())))?
        }
        None => match a.preset {
            Preset::Single => presets::single_relation(a.rows),
            Preset::Chain => presets::join_chain(a.scale),
        },
    };
    let seed = a.seed.unwrap_or(cfg.seed);
    let catalog = synthesize(&spec, seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut sources = Vec::new();
    for rs in &spec.relations {
        let rel = catalog
            .relation(&rs.name)
            .ok_or_else(|| Error::UnknownRelation(rs.name.clone()))?;
        let csv = PathBuf::from(format!("{}.csv", rs.name));
        let schema = PathBuf::from(format!("{}.schema.json", rs.name));
        export_csv(rel, a.out.join(&csv))?;
        let kinds: BTreeMap<&str, ColumnKind> = rel.columns().iter().map(|c| (c.name.as_str(), c.ctype.kind())).collect();
        write_json_pretty(&a.out.join(&schema), &kinds)?;
        sources.push(RelationSource {
            name: rs.name.clone(),
            csv,
            schema,
        });
    }
    let file = CatalogFile {
        relations: sources,
        aliases: spec.aliases.clone(),
        join_pairs: spec.join_pairs.clone(),
    };
    let path = a.out.join("catalog.json");
    write_json_pretty(&path, &file)?;
    let hash = catalog.content_hash();
    let reloaded = SchemaCatalog::load(&path)?.content_hash();
    if reloaded != hash {
        return Err(Error::HashMismatch {
            what: "catalog",
            expected: hash,
            got: reloaded,
        });
    }
    emit(
        out,
        json!({
            "catalog": path,
            "catalog_hash": hash,
            "seed": seed,
            "relations": catalog.relations().iter().map(|r| json!({"name": r.name(), "rows": r.n_rows()})).collect::<Vec<_>>(),
        }),
    )
}

pub(super) fn ingest(a: IngestArgs, out: &mut impl Write) -> Result<()> {
    let (catalog, hash) = load_catalog(&a.catalog)?;
    let summary = json!({
        "catalog_hash": hash,
        "relations": catalog.relations().iter().map(|r| json!({
            "name": r.name(),
            "rows": r.n_rows(),
            "columns": r.domain_summary(),
        })).collect::<Vec<_>>(),
        "join_pairs": catalog.join_pairs().iter().map(|p| p.to_string()).collect::<Vec<_>>(),
    });
    if let Some(p) = &a.out {
        write_json_pretty(p, &summary)?;
    }
    emit(out, summary)
}

fn spread(n: usize, levels: usize) -> Vec<usize> {
    (0..levels).map(|i| n / levels + usize::from(i < n % levels)).collect()
}

pub fn generate_queries(catalog: &SchemaCatalog, w: &WorkloadConfig, seed: u64) -> Result<Vec<Query>> {
    let mut queries = Vec::with_capacity(w.n);
    match w.mode {
        WorkloadMode::Single => {
            let rel = match &w.relation {
                Some(name) => catalog.relation(name).ok_or_else(|| Error::UnknownRelation(name.clone()))?,
                None => catalog
                    .relations()
                    .first()
                    .ok_or_else(|| Error::Empty("catalog has no relations".into()))?,
            };
            let levels: Vec<usize> = if w.conditions.is_empty() {
                (2..=rel.columns().len()).collect()
            } else {
                w.conditions.clone()
            };
            if levels.is_empty() {
                return Err(Error::InvalidArgument(format!("relation '{}' has fewer than 2 attributes", rel.name())));
            }
            for (i, (&d, count)) in levels.iter().zip(spread(w.n, levels.len())).enumerate() {
                if count > 0 {
                    queries.extend(gen_single_relation(rel, d, count, level_seed(seed, i))?);
                }
            }
        }
        WorkloadMode::Join => {
            if w.joins.is_empty() {
                return Err(Error::InvalidArgument("join mode needs at least one join count".into()));
            }
            let opts = JoinGenOptions {
                selections_per_relation: w.selections_per_relation,
                theta_joins: w.theta_joins,
            };
            for (i, (&t, count)) in w.joins.iter().zip(spread(w.n, w.joins.len())).enumerate() {
                if count > 0 {
                    queries.extend(gen_join(catalog, t, count, level_seed(seed, i), &opts)?);
                }
            }
        }
    }
    Ok(queries)
}

pub(super) fn gen_queries(cfg: &PipelineConfig, a: GenQueriesArgs, out: &mut impl Write) -> Result<()> {
    let mut w = cfg.workload.clone();
    if let Some(m) = a.mode {
        w.mode = m;
    }
    if a.relation.is_some() {
        w.relation = a.relation.clone();
    }
    if let Some(c) = a.conditions {
        w.conditions = c;
    }
    if let Some(j) = a.joins {
        w.joins = j;
    }
    if let Some(n) = a.n {
        w.n = n;
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let (catalog, hash) = load_catalog(&a.catalog)?;
    let recs = workload::records(generate_queries(&catalog, &w, seed)?, 0);
    let header = Header::derive(QUERIES_KIND, "gen-queries", &json!({"seed": seed, "workload": w}), &Header::catalog_root(&hash))?;
    save_jsonl(&a.out, Some(&header), &recs)?;
    emit(out, json!({"out": a.out, "queries": recs.len()}))
}

pub(super) fn label(cfg: &PipelineConfig, a: LabelArgs, out: &mut impl Write) -> Result<()> {
    let (catalog, hash) = load_catalog(&a.catalog)?;
    let (h, recs): (_, Vec<QueryRecord>) = load_jsonl(&a.queries)?;
    if let Some(h) = &h {
        expect_kinds(h, &[QUERIES_KIND, WORKLOAD_KIND])?;
    }
    let upstream = chain_for(h.as_ref(), &hash)?;
    let before = recs.len();
    let labeled = finalize(recs, &catalog, None)?;
    let header = Header::derive(WORKLOAD_KIND, "label", &json!({}), &upstream)?;
    save_jsonl(&a.out, Some(&header), &labeled)?;
    let mut summary = json!({"out": a.out, "labeled": labeled.len(), "dropped": before - labeled.len()});
    if let Some(dir) = &a.split_dir {
        let fractions = match &a.fractions {
            Some(f) if f.len() == 3 => [f[0], f[1], f[2]],
            Some(f) => return Err(Error::InvalidArgument(format!("--fractions needs 3 values, got {}", f.len()))),
            None => cfg.split.fractions,
        };
        let seed = a.seed.unwrap_or(cfg.seed);
        let s = workload::split(&labeled, fractions, |r| r.query.n_conditions(), seed)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (part, recs) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
            let ph = Header::derive(
                WORKLOAD_KIND,
                "split",
                &json!({"seed": seed, "fractions": fractions, "part": part}),
                &header.chain,
            )?;
            save_jsonl(dir.join(format!("{part}.jsonl")), Some(&ph), recs)?;
        }
        let meta = SplitMetadata::new(&labeled, &s, seed, fractions);
        let mh = Header::derive("split-metadata", "split", &json!({"seed": seed, "fractions": fractions}), &header.chain)?;
        write_json_pretty(&dir.join("split.json"), &json!({"header": mh, "metadata": meta}))?;
        summary["split"] = json!({"train": s.train.len(), "valid": s.valid.len(), "test": s.test.len(), "undersized": s.undersized});
    }
    emit(out, summary)
}

pub(super) fn encode(cfg: &PipelineConfig, a: EncodeArgs, out: &mut impl Write) -> Result<()> {
    let mut opts = cfg.encoding.clone();
    if let Some(s) = a.chunk_size {
        opts.chunk_size = s;
    }
    if let Some(t) = a.bitmap_threshold {
        opts.bitmap_threshold = t;
    }
    if a.no_normalize {
        opts.normalize = false;
    }
    let (catalog, hash) = load_catalog(&a.catalog)?;
    let (h, recs): (_, Vec<QueryRecord>) = load_jsonl(&a.queries)?;
    if let Some(h) = &h {
        expect_kinds(h, &[WORKLOAD_KIND, QUERIES_KIND])?;
    }
    let upstream = chain_for(h.as_ref(), &hash)?;
    let layout = build_layout(&catalog, &opts)?;
    let batch = encode_batch(&recs, &layout)?;
    let echo = json!({"encoding": opts, "layout_hash": layout.hash});
    let header = Header::derive(MATRIX_KIND, "encode", &echo, &upstream)?;
    save_matrix(&a.out, &header, &batch)?;
    if let Some(p) = &a.layout_out {
        let lh = Header::derive("layout", "encode", &echo, &Header::catalog_root(&hash))?;
        write_json_pretty(p, &json!({"header": lh, "layout": layout}))?;
    }
    emit(
        out,
        json!({
            "out": a.out,
            "n": batch.len(),
            "d_enc": layout.d_enc,
            "layout_hash": layout.hash,
            "labeled": batch.is_labeled(),
            "collisions": batch.collisions().len(),
        }),
    )
}

fn kernel_config(cfg: &PipelineConfig, flags: &KernelArgs) -> Result<crate::kernel::KernelConfig> {
    let mut k = cfg.kernel.clone();
    flags.apply(&mut k);
    k.validate()?;
    Ok(k)
}

fn load_labeled(path: &Path) -> Result<(Header, EncodedBatch)> {
    let (mh, batch) = load_matrix(path)?;
    if !batch.is_labeled() {
        return Err(Error::InvalidArgument(format!("{} holds unlabeled queries", path.display())));
    }
    Ok((mh.header, batch))
}

pub(super) fn train(cfg: &PipelineConfig, a: TrainArgs, out: &mut impl Write) -> Result<()> {
    let k = kernel_config(cfg, &a.kernel)?;
    let (mh, batch) = load_labeled(&a.train)?;
    let est = gp::fit_batch(&batch, &k)?;
    let header = Header::derive(MODEL_KIND, "train", &k, &mh.chain)?;
    gp::save(&a.out, &header, &est)?;
    emit(out, json!({"out": a.out, "fit": est.report}))
}

fn predict_options(cfg: &PipelineConfig, flags: &PredictFlags) -> Result<PredictOptions> {
    let mut o = cfg.predict.clone();
    flags.apply(&mut o);
    normal_quantile(o.delta)?;
    Ok(o)
}

/// Prediction records for every query of `batch`, in batch order.
pub fn prediction_records(est: &TrainedEstimator, batch: &EncodedBatch, o: &PredictOptions) -> Result<Vec<PredictionRecord>> {
    let preds = est.predict(batch, o.variance)?;
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (lo, hi) = confidence_interval(p, o.delta, o.interval)?;
            let cov = gp::coefficient_of_variation(p, o.cov);
            Ok(PredictionRecord {
                query_id: batch.ids[i],
                card_estimate: p.card_estimate(),
                mean_log: p.mean_log,
                var_log: p.var_log,
                ci_low: lo,
                ci_high: hi,
                cov: cov.is_finite().then_some(cov),
                cardinality: batch.cardinality[i],
                n_conditions: batch.n_conditions[i],
            })
        })
        .collect()
}

fn model_and_input(model: &Path, input: &Path) -> Result<(Header, TrainedEstimator, Header, EncodedBatch)> {
    let (model_h, est) = gp::load(model)?;
    let (mh, batch) = load_matrix(input)?;
    same_catalog(&model_h.header, &mh.header)?;
    if est.layout_hash != batch.layout_hash {
        return Err(Error::LayoutMismatch {
            expected: est.layout_hash.clone(),
            got: batch.layout_hash.clone(),
        });
    }
    Ok((model_h.header, est, mh.header, batch))
}

fn input_link(h: &Header) -> &str {
    h.chain.last().map_or("", |l| l.hash.as_str())
}

pub(super) fn predict(cfg: &PipelineConfig, a: PredictArgs, out: &mut impl Write) -> Result<()> {
    let o = predict_options(cfg, &a.predict)?;
    let (model_h, est, input_h, batch) = model_and_input(&a.model, &a.input)?;
    let recs = prediction_records(&est, &batch, &o)?;
    let header = Header::derive(
        PREDICTIONS_KIND,
        "predict",
        &json!({"predict": o, "input": input_link(&input_h)}),
        &model_h.chain,
    )?;
    save_jsonl(&a.out, Some(&header), &recs)?;
    emit(out, json!({"out": a.out, "n": recs.len()}))
}

/// Report over labeled prediction records.
pub fn evaluation_report(recs: &[PredictionRecord], header: Header) -> Result<(EvaluationReport, eval::UncertaintyReport)> {
    let mut truth = Vec::with_capacity(recs.len());
    for r in recs {
        let c = r.cardinality.ok_or_else(|| {
            Error::InvalidArgument(format!("query {} has no true cardinality; evaluate needs labeled input", r.query_id))
        })?;
        truth.push(c as f64);
    }
    let est: Vec<f64> = recs.iter().map(|r| r.card_estimate).collect();
    let ids: Vec<u64> = recs.iter().map(|r| r.query_id).collect();
    let cov: Vec<f64> = recs.iter().map(|r| r.cov.unwrap_or(f64::INFINITY)).collect();
    let n_cond: Vec<usize> = recs.iter().map(|r| r.n_conditions).collect();
    let unc = uncertainty_error_report(&ids, &cov, &truth, &est, &n_cond)?;
    let report = EvaluationReport {
        header,
        n: recs.len(),
        mse_log: mse_log(&truth, &est)?,
        stratified_mse: stratified_mse(&truth, &est, &n_cond)?,
        spearman: unc.spearman,
        q_error: unc.q_error.overall.clone(),
        q_error_strata: unc.q_error.strata.clone(),
    };
    Ok((report, unc))
}

pub(super) fn evaluate(cfg: &PipelineConfig, a: EvaluateArgs, out: &mut impl Write) -> Result<()> {
    let (recs, header) = match (&a.predictions, &a.model, &a.input) {
        (Some(p), _, _) => {
            let (h, recs): (_, Vec<PredictionRecord>) = load_jsonl(p)?;
            let h = h.ok_or_else(|| Error::format("artifact", format!("{} has no header", p.display())))?;
            h.expect_kind(PREDICTIONS_KIND)?;
            (recs, Header::derive("report", "evaluate", &json!({}), &h.chain)?)
        }
        (None, Some(m), Some(i)) => {
            let o = predict_options(cfg, &a.predict)?;
            let (model_h, est, input_h, batch) = model_and_input(m, i)?;
            let recs = prediction_records(&est, &batch, &o)?;
            let echo = json!({"predict": o, "input": input_link(&input_h)});
            (recs, Header::derive("report", "evaluate", &echo, &model_h.chain)?)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "evaluate needs --predictions, or --model with --input".into(),
            ))
        }
    };
    if recs.is_empty() {
        return Err(Error::Empty("no predictions to evaluate".into()));
    }
    let (report, unc) = evaluation_report(&recs, header)?;
    if let Some(p) = &a.out {
        write_json_pretty(p, &report)?;
    }
    if let Some(p) = &a.scatter {
        let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
        write_scatter_csv(std::io::BufWriter::new(f), &unc.points)?;
    }
    write!(out, "{}", render_table(&unc.q_error))?;
    writeln!(out, "mse_log {}", report.mse_log)?;
    match report.spearman {
        Some(s) => writeln!(out, "spearman(cov, |ln q|) {s}")?,
        None => writeln!(out, "spearman(cov, |ln q|) undefined")?,
    }
    Ok(())
}

pub(super) fn active_learn(cfg: &PipelineConfig, a: ActiveLearnArgs, out: &mut impl Write) -> Result<()> {
    let k = kernel_config(cfg, &a.kernel)?;
    let per_round = a.k.unwrap_or(cfg.active.k);
    let iterations = a.iterations.unwrap_or(cfg.active.iterations);
    let cov_mode = a.cov.unwrap_or(cfg.predict.cov);
    let (train_h, train) = load_labeled(&a.train)?;
    let (test_h, test) = load_labeled(&a.test)?;
    let (pool_mh, mut pool) = load_matrix(&a.pool)?;
    same_catalog(&train_h, &test_h)?;
    same_catalog(&train_h, &pool_mh.header)?;

    let mut truth: HashMap<u64, u64> = HashMap::new();
    let mut queries: HashMap<u64, Query> = HashMap::new();
    let mut catalog = None;
    match (&a.catalog, &a.pool_queries) {
        (Some(c), Some(q)) => {
            let (cat, hash) = load_catalog(c)?;
            check_catalog(&pool_mh.header, &hash)?;
            let (h, recs): (_, Vec<QueryRecord>) = load_jsonl(q)?;
            chain_for(h.as_ref(), &hash)?;
            queries = recs.into_iter().map(|r| (r.id, r.query)).collect();
            catalog = Some(cat);
        }
        _ => {
            if !pool.is_labeled() {
                return Err(Error::InvalidArgument(
                    "unlabeled pool: pass --catalog and --pool-queries to label with the oracle".into(),
                ));
            }
            truth = pool.ids.iter().zip(&pool.cardinality).map(|(i, c)| (*i, c.unwrap_or(0))).collect();
        }
    }
    pool.cardinality = vec![None; pool.len()];

    let label = |ids: &[u64]| -> Result<Vec<u64>> {
        match &catalog {
            Some(cat) => {
                let qs = ids
                    .iter()
                    .map(|i| {
                        queries
                            .get(i)
                            .cloned()
                            .ok_or_else(|| Error::InvalidArgument(format!("pool query {i} missing from --pool-queries")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                execute_batch(&qs, cat, None)
            }
            None => Ok(ids.iter().map(|i| truth[i]).collect()),
        }
    };
    let mut state = ALState::new(train, pool, test, per_round)?;
    let est = eval::active_learn(&mut state, |b| gp::fit_batch(b, &k), label, iterations, cov_mode)?;
    let echo = json!({"kernel": k, "k": per_round, "iterations": iterations, "cov": cov_mode});
    let header = Header::derive("active-learning", "active-learn", &echo, &train_h.chain)?;
    save_jsonl(&a.out, Some(&header), &state.history)?;
    if let Some(p) = &a.model_out {
        let mh = Header::derive(MODEL_KIND, "active-learn", &echo, &train_h.chain)?;
        gp::save(p, &mh, &est)?;
    }
    for it in &state.history {
        emit(out, json!({"iteration": it.iteration, "n_train": it.n_train, "test_mse": it.test_mse}))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Check {
    check: &'static str,
    passed: bool,
    worst: f64,
    tolerance: f64,
}

pub(super) fn selfcheck(cfg: &PipelineConfig, a: SelfcheckArgs, out: &mut impl Write) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kc = crate::kernel::KernelConfig::default();
    let d = 8;
    let mut checks = Vec::new();

    // closed-form layer steps against sampling, on covariances the
    // base kernel produces for nonnegative encodings
    let mut relu_worst: f64 = 0.0;
    let mut erf_worst: f64 = 0.0;
    for _ in 0..a.inputs {
        let x = FeatureMatrix::from_vec(d, (0..2 * d).map(|_| rng.random::<f64>()).collect())?;
        let b = base_kernel(&x, &x, &kc)?;
        let (kxx, kxy, kyy) = (b.get(0, 0), b.get(0, 1), b.get(1, 1));
        let exact = relu_layer_step(kxx, kxy, kyy, &kc)?;
        let mc = kc.sigma_b_sq + kc.sigma_w_sq * mc_relu(kxx, kxy, kyy, a.samples, &mut rng);
        relu_worst = relu_worst.max((exact - mc).abs() / exact.abs());
        let exact = erf_kernel_step(kxx, kxy, kyy, &kc);
        let mc = kc.sigma_b_sq + kc.sigma_w_sq * mc_erf(kxx, kxy, kyy, a.samples, &mut rng);
        erf_worst = erf_worst.max((exact - mc).abs() / exact.abs());
    }
    checks.push(Check {
        check: "relu_step_vs_sampling",
        passed: relu_worst <= 0.01,
        worst: relu_worst,
        tolerance: 0.01,
    });
    checks.push(Check {
        check: "erf_step_vs_sampling",
        passed: erf_worst <= 0.01,
        worst: erf_worst,
        tolerance: 0.01,
    });

    let x = FeatureMatrix::from_vec(d, (0..16 * d).map(|_| rng.random::<f64>()).collect())?;
    let shallow = crate::kernel::KernelConfig { depth: 0, ..kc.clone() };
    let a0 = nngp_kernel(&x, &x, &shallow)?;
    let b0 = base_kernel(&x, &x, &shallow)?;
    let depth0 = a0.as_slice().iter().zip(b0.as_slice()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    checks.push(Check {
        check: "depth0_equals_base_kernel",
        passed: depth0 <= 1e-12,
        worst: depth0,
        tolerance: 1e-12,
    });

    let y: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..10.0)).collect();
    let noiseless = crate::kernel::KernelConfig { noise_sq: 0.0, ..kc };
    let est = gp::fit(&x, &y, &noiseless, "selfcheck")?;
    let preds = est.predict_features(&x, crate::gp::VarianceMode::Latent)?;
    let interp = preds
        .iter()
        .zip(&y)
        .map(|(p, t)| (p.mean_log - t).abs().max(p.var_log))
        .fold(0.0, f64::max);
    checks.push(Check {
        check: "gp_interpolates_training_points",
        passed: interp <= 1e-6,
        worst: interp,
        tolerance: 1e-6,
    });

    for c in &checks {
        emit(out, serde_json::to_value(c)?)?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.check).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(failed.join(", ")))
    }
}
