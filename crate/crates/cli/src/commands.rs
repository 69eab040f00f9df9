use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use skillcot_core::annotation::annotate_corpus;
use skillcot_core::canonical::to_canonical_json;
use skillcot_core::clustering::{fit_kmeans_detailed, KMeansOptions};
use skillcot_core::corpus::split_dataset;
use skillcot_core::corpus::{
    canonical_lines, manifest_path, parse_annotations, parse_dataset, training_export,
    write_annotations,
};
use skillcot_core::experts::{
    ablation, backfill_expert_ids, eval_specialization, featurize_annotated, generate_synthetic,
    partition_experts, route, train_toy, ExpertPartition, Mapping, SpecializationSummary,
    ToyModelConfig, TrainReport,
};
use skillcot_core::llmclient::{
    LlmClient, MockTransport, RemoteChatTransport, ResponseCache, TemplateRegistry, Transport,
};
use skillcot_core::projection::pca_2d;
use skillcot_core::taxonomy::{
    describe, extract_skills, select_skills, ExtractedSkill, ExtractionStatus, SelectionContext,
    SelectionMethod, SkillTaxonomy,
};
use skillcot_core::{Error, Result, Verification};

use crate::config::PipelineConfig;
use crate::manifest::Run;
use crate::{Cli, Command, GlobalArgs};

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn load_config(global: &GlobalArgs, explicit: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = match explicit.or(global.config.as_deref()) {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(k) = global.skills {
        cfg.annotation.top_k = k;
    }
    if let Some(l) = global.lambda {
        cfg.toy.model.lambda = l;
        cfg.experiment.model.lambda = l;
    }
    if let Some(r) = global.rank {
        cfg.toy.model.adapter_rank = r;
        cfg.experiment.model.adapter_rank = r;
    }
    if let Some(m) = global.max_inflight {
        cfg.max_inflight = m;
    }
    Ok(cfg)
}

fn client(global: &GlobalArgs, cfg: &PipelineConfig) -> Result<LlmClient> {
    let registry = match &cfg.templates_dir {
        Some(dir) => TemplateRegistry::with_overrides(dir)?,
        None => TemplateRegistry::builtin(),
    };
    registry.audit()?;
    let transport: Arc<dyn Transport> = match &global.mock_script {
        Some(script) => Arc::new(MockTransport::from_script(script)?),
        None => Arc::new(RemoteChatTransport::new(cfg.llm.clone())?),
    };
    let mut client = LlmClient::new(registry, transport).with_max_inflight(cfg.max_inflight);
    if let Some(path) = &global.cache {
        client = client.with_cache(ResponseCache::open(path)?);
    }
    Ok(client)
}

fn emit(value: serde_json::Value) -> Result<()> {
    println!("{}", to_canonical_json(&value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Split { dataset, ratio } => {
            let mut cfg = load_config(g, None)?;
            if let Some(r) = ratio {
                cfg.split_ratio = *r;
            }
            let mut run = Run::start("split", &g.out, &cfg)?;
            run.seed(cfg.seed);
            let examples = parse_dataset(&run.input(dataset)?)?;
            let (train, test) = split_dataset(&examples, cfg.split_ratio, cfg.seed)?;
            run.write("train.jsonl", &canonical_lines(&train)?)?;
            run.write("test.jsonl", &canonical_lines(&test)?)?;
            run.finish()?;
            emit(json!({"train": train.len(), "test": test.len()}))
        }
        Command::ExtractSkills { dataset } => {
            let cfg = load_config(g, None)?;
            let mut run = Run::start("extract-skills", &g.out, &cfg)?;
            let examples = parse_dataset(&run.input(dataset)?)?;
            if let Some(script) = &g.mock_script {
                run.input(script)?;
            }
            let client = client(g, &cfg)?;
            let extracted = extract_skills(&examples, &client, &cfg.annotation.models.describe)?;
            run.write("skills.jsonl", &canonical_lines(&extracted)?)?;
            run.finish()?;
            let ok = extracted
                .iter()
                .filter(|e| e.status == ExtractionStatus::Ok)
                .count();
            let retried = extracted.iter().filter(|e| e.attempts > 1).count();
            emit(
                json!({"ok": ok, "skill_extraction_failed": extracted.len() - ok, "retried": retried}),
            )
        }
        Command::BuildTaxonomy { descriptions } => {
            let mut cfg = load_config(g, None)?;
            if let Some(k) = g.k {
                cfg.n_skills = k;
            }
            let mut run = Run::start("build-taxonomy", &g.out, &cfg)?;
            run.seed(cfg.seed);
            let text = run.input(descriptions)?;
            let extracted = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str::<ExtractedSkill>(l)
                        .map_err(|e| Error::format(descriptions, i + 1, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            let encoder = cfg.encoder(&cfg.encoder)?;
            let descs = describe(&extracted, encoder.as_ref())?;
            let taxonomy = skillcot_core::taxonomy::build_taxonomy(
                &descs,
                cfg.n_skills,
                cfg.seed,
                &cfg.encoder,
            )?;
            run.write("taxonomy.txt", &taxonomy.to_text())?;
            run.finish()?;
            emit(
                json!({"n_skills": taxonomy.n_skills, "descriptions": descs.len(),
                "member_counts": taxonomy.member_counts}),
            )
        }
        Command::Annotate { dataset, taxonomy } => {
            let cfg = load_config(g, None)?;
            let mut run = Run::start("annotate", &g.out, &cfg)?;
            let examples = parse_dataset(&run.input(dataset)?)?;
            let taxonomy = SkillTaxonomy::parse(&run.input(taxonomy)?, taxonomy)?;
            if let Some(script) = &g.mock_script {
                run.input(script)?;
            }
            let encoder = cfg.encoder(&taxonomy.encoder)?;
            let client = client(g, &cfg)?;
            let (annotated, report) = annotate_corpus(
                &examples,
                &taxonomy,
                encoder.as_ref(),
                &cfg.annotation,
                &client,
            )?;
            let path = run.output_path("annotations.jsonl");
            write_annotations(&annotated, &path, None)?;
            run.record(&path)?;
            run.record(&manifest_path(&path))?;
            run.write(
                "annotate.report.json",
                &(to_canonical_json(&report)? + "\n"),
            )?;
            run.finish()?;
            emit(serde_json::to_value(&report).expect("report serializes"))
        }
        Command::PartitionExperts { annotations } => {
            let mut cfg = load_config(g, None)?;
            if let Some(k) = g.k {
                cfg.n_experts = k;
            }
            let mut run = Run::start("partition-experts", &g.out, &cfg)?;
            run.seed(cfg.seed);
            let mut annotated = parse_annotations(&run.input(annotations)?)?;
            let items: Vec<(&str, &str)> = annotated
                .iter()
                .filter(|a| a.verification == Verification::Verified)
                .map(|a| (a.base.id.as_str(), a.base.question.as_str()))
                .collect();
            let encoder = cfg.encoder(&cfg.encoder)?;
            let opts = KMeansOptions {
                restarts: cfg.kmeans_restarts.max(1),
                ..KMeansOptions::default()
            };
            let partition =
                partition_experts(&items, cfg.n_experts, cfg.seed, encoder.as_ref(), &opts)?;
            backfill_expert_ids(&partition, &mut annotated);
            run.write("partition.txt", &partition.to_text())?;
            for (name, records) in [
                ("annotations.partitioned.jsonl", annotated.clone()),
                ("train_export.jsonl", training_export(&annotated)?),
            ] {
                let path = run.output_path(name);
                write_annotations(&records, &path, None)?;
                run.record(&path)?;
                run.record(&manifest_path(&path))?;
            }
            run.finish()?;
            let mut sizes = vec![0usize; partition.n_experts];
            for &e in partition.assignments.values() {
                sizes[e] += 1;
            }
            emit(
                json!({"n_experts": partition.n_experts, "assigned": partition.assignments.len(),
                "expert_sizes": sizes}),
            )
        }
        Command::Route {
            partition,
            question,
            taxonomy,
        } => {
            let cfg = load_config(g, None)?;
            let mut run = Run::start("route", &g.out, &cfg)?;
            let partition = ExpertPartition::parse(&run.input(partition)?, partition)?;
            let encoder = cfg.encoder(&partition.encoder)?;
            let expert = route(question, &partition, encoder.as_ref())?;
            let mut out = json!({"expert": expert});
            if let Some(tpath) = taxonomy {
                let taxonomy = SkillTaxonomy::parse(&run.input(tpath)?, tpath)?;
                let tenc = cfg.encoder(&taxonomy.encoder)?;
                let ctx = SelectionContext {
                    taxonomy: &taxonomy,
                    encoder: tenc.as_ref(),
                    client: None,
                    model_id: &cfg.annotation.models.select,
                };
                let sel = select_skills(
                    "query",
                    question,
                    cfg.annotation.top_k,
                    SelectionMethod::Embedding,
                    &ctx,
                )?;
                out["skills"] = json!(sel.skill_ids);
                out["skill_phrases"] = json!(sel
                    .skill_ids
                    .iter()
                    .map(|&i| taxonomy.representative_phrases[i].clone())
                    .collect::<Vec<_>>());
                out["scores"] = json!(sel.scores.iter().map(|&s| f6(s)).collect::<Vec<_>>());
            }
            run.finish()?;
            emit(out)
        }
        Command::TrainToy { config } => train_toy_cmd(g, config),
        Command::EvalSpecialization {
            config,
            seeds,
            ablation: with_ablation,
        } => {
            let mut cfg = load_config(g, config.as_deref())?;
            if let Some(k) = g.k {
                cfg.experiment.n_experts = k;
            }
            let mut run = Run::start("eval-specialization", &g.out, &cfg)?;
            if let Some(p) = config {
                run.input(p)?;
            }
            seeds.iter().for_each(|&s| run.seed(s));
            #[derive(Serialize)]
            struct Row {
                dataset: &'static str,
                seed: u64,
                routed_accuracy: String,
                shared_accuracy: String,
            }
            let mut rows = Vec::new();
            let mut summary = serde_json::Map::new();
            for (name, mapping) in [
                ("interference", Mapping::Interference),
                ("shared", Mapping::Shared),
            ] {
                let mut exp = cfg.experiment.clone();
                exp.synthetic.mapping = mapping;
                let result = eval_specialization(&exp, seeds)?;
                let s = SpecializationSummary::of(&result);
                rows.extend(result.iter().map(|r| Row {
                    dataset: name,
                    seed: r.seed,
                    routed_accuracy: f6(r.routed_accuracy),
                    shared_accuracy: f6(r.shared_accuracy),
                }));
                summary.insert(
                    name.into(),
                    json!({"mean_routed": f6(s.mean_routed), "mean_shared": f6(s.mean_shared),
                        "gap_points": f6(s.gap_points())}),
                );
            }
            run.write("specialization.csv", &to_csv(&rows)?)?;
            if *with_ablation {
                let report = ablation(&cfg.experiment, seeds)?;
                #[derive(Serialize)]
                struct Cell {
                    skill_cot: bool,
                    experts: bool,
                    accuracy: String,
                }
                let cells: Vec<Cell> = report
                    .cells
                    .iter()
                    .map(|c| Cell {
                        skill_cot: c.skill_cot,
                        experts: c.experts,
                        accuracy: f6(c.accuracy),
                    })
                    .collect();
                run.write("ablation.csv", &to_csv(&cells)?)?;
                summary.insert(
                    "ablation".into(),
                    serde_json::to_value(&cells).expect("cells serialize"),
                );
            }
            run.finish()?;
            emit(serde_json::Value::Object(summary))
        }
        Command::ExportProjection { embeddings, method } => {
            if method != "pca" {
                return Err(Error::InvalidArgument(format!(
                    "unknown projection method {method:?}; use pca"
                )));
            }
            let cfg = load_config(g, None)?;
            let mut run = Run::start("export-projection", &g.out, &cfg)?;
            let text = run.input(embeddings)?;
            let (points, labels) = projection_input(&text, embeddings)?;
            let projected = pca_2d(&points)?;
            #[derive(Serialize)]
            struct Row<'a> {
                x: String,
                y: String,
                label: &'a str,
            }
            let rows: Vec<Row> = projected
                .iter()
                .zip(&labels)
                .map(|(p, l)| Row {
                    x: f6(p[0]),
                    y: f6(p[1]),
                    label: l,
                })
                .collect();
            run.write("projection.csv", &to_csv(&rows)?)?;
            run.finish()?;
            emit(json!({"rows": rows.len()}))
        }
    }
}

#[derive(Deserialize)]
struct LabelledEmbedding {
    label: String,
    embedding: Vec<f64>,
}

/// Taxonomy centroids labelled by phrase, partition centroids labelled by
/// expert, or `{"label", "embedding"}` lines.
fn projection_input(text: &str, path: &Path) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let has = |section: &str| text.lines().any(|l| l.trim() == section);
    if has("[phrases]") {
        let t = SkillTaxonomy::parse(text, path)?;
        return Ok((t.centroid_model.centroids, t.representative_phrases));
    }
    if has("[assignments]") {
        let p = ExpertPartition::parse(text, path)?;
        let labels = (0..p.n_experts).map(|e| format!("expert {e}")).collect();
        return Ok((p.centroid_model.centroids, labels));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let r: LabelledEmbedding =
            serde_json::from_str(line).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        points.push(r.embedding);
        labels.push(r.label);
    }
    Ok((points, labels))
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    expert: usize,
    answer_loss: String,
    cot_loss: String,
    combined_loss: String,
}

#[derive(Serialize)]
struct MetricRow {
    metric: String,
    value: String,
}

fn report_files(run: &mut Run, report: &TrainReport) -> Result<()> {
    let losses: Vec<LossRow> = report
        .epochs
        .iter()
        .map(|l| LossRow {
            epoch: l.epoch,
            expert: l.expert,
            answer_loss: f6(l.answer),
            cot_loss: f6(l.cot),
            combined_loss: f6(l.combined),
        })
        .collect();
    run.write("train_losses.csv", &to_csv(&losses)?)?;
    let mut metrics = Vec::new();
    for (e, (size, acc)) in report
        .shard_sizes
        .iter()
        .zip(&report.expert_accuracy)
        .enumerate()
    {
        metrics.push(MetricRow {
            metric: format!("expert_{e}_shard_size"),
            value: size.to_string(),
        });
        metrics.push(MetricRow {
            metric: format!("expert_{e}_train_accuracy"),
            value: acc.map(f6).unwrap_or_default(),
        });
    }
    metrics.push(MetricRow {
        metric: "pooled_train_accuracy".into(),
        value: f6(report.pooled_accuracy),
    });
    metrics.push(MetricRow {
        metric: "gradient_check_max_rel_err".into(),
        value: format!("{:.3e}", report.gradient_check_max_rel_err),
    });
    run.write("train_metrics.csv", &to_csv(&metrics)?)?;
    Ok(())
}

fn train_toy_cmd(g: &GlobalArgs, config: &Path) -> Result<()> {
    let mut cfg = load_config(g, Some(config))?;
    if let Some(k) = g.k {
        cfg.n_experts = k;
    }
    let mut run = Run::start("train-toy", &g.out, &cfg)?;
    run.input(config)?;
    run.seed(cfg.seed);
    let (data, assignments, n_experts, model_cfg) = match &cfg.toy.annotations {
        Some(path) => {
            let annotated = training_export(&parse_annotations(&run.input(path)?)?)?;
            if annotated.is_empty() {
                return Err(Error::InvalidArgument(
                    "no verified annotations to train on".into(),
                ));
            }
            let data = featurize_annotated(&annotated, cfg.toy.model.input_dim)?;
            let assignments: Vec<usize> = annotated.iter().map(|a| a.expert_id as usize).collect();
            let n_experts = cfg
                .n_experts
                .max(assignments.iter().max().map_or(0, |m| m + 1));
            let model_cfg = ToyModelConfig {
                answer_classes: annotated
                    .iter()
                    .filter_map(|a| a.base.choices.as_ref().map(Vec::len))
                    .max()
                    .unwrap_or(1),
                cot_vocab: cfg
                    .n_skills
                    .max(data.cot_targets.iter().flatten().max().map_or(0, |m| m + 1)),
                cot_len: data.cot_targets[0].len(),
                seed: cfg.seed,
                ..cfg.toy.model.clone()
            };
            (data, assignments, n_experts, model_cfg)
        }
        None => {
            let synth = generate_synthetic(&cfg.toy.synthetic, cfg.seed);
            let opts = KMeansOptions {
                restarts: cfg.kmeans_restarts.max(1),
                ..KMeansOptions::default()
            };
            let fit = fit_kmeans_detailed(&synth.train_route, cfg.n_experts, cfg.seed, &opts)?;
            let model_cfg = ToyModelConfig {
                seed: cfg.seed,
                ..cfg.toy.synthetic.model_config(&cfg.toy.model)
            };
            (synth.train, fit.labels, cfg.n_experts, model_cfg)
        }
    };
    let (model, report) = train_toy(&data, &assignments, n_experts, &model_cfg)?;
    run.write("model.txt", &model.to_text())?;
    report_files(&mut run, &report)?;
    run.finish()?;
    let last = |e: usize| report.losses_of(e).last().map(|l| f6(l.combined));
    emit(json!({
        "examples": data.len(),
        "n_experts": n_experts,
        "pooled_train_accuracy": f6(report.pooled_accuracy),
        "final_combined_loss": (0..n_experts).map(last).collect::<Vec<_>>(),
        "gradient_check_max_rel_err": format!("{:.3e}", report.gradient_check_max_rel_err),
    }))
}
