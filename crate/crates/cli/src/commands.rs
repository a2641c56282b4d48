//! The experiment subcommands.

use std::path::Path;

use radcycle_core::checkpoint::Checkpoint;
use radcycle_core::classifiers::{
    train_toy_image_classifier, ImageClassifier, LabelSet, ReportClassifier, ToyClassifierConfig,
    ToyImageClassifier, LABELS,
};
use radcycle_core::cycle::{train_cycle, CycleConfig};
use radcycle_core::data::toy::{labels_from_caption, presence, write_toy_dataset};
use radcycle_core::data::{
    build_vocabulary, extract_caption, filter_frontal, parse_study_collection, split_train_test,
};
use radcycle_core::explain::{
    faithfulness_evaluation, gradcam, render_overlay, trust_evaluation, ModelOracles,
};
use radcycle_core::image_gen::{train_image_generator, ImageGenModel, Stage};
use radcycle_core::metrics::{bleu_n, rouge_l, MetricsBundle};
use radcycle_core::report_gen::{train_report_generator, ReportGenModel};
use radcycle_core::{Error as CoreError, Result as CoreResult};

use crate::config::{ExperimentConfig, Profile};
use crate::manifest::Manifest;
use crate::workspace::{self, model_configs, WorkFile, Workspace, WORK_SCHEMA_VERSION};

fn ensure_dir(path: &Path) -> CoreResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })
}

fn config_toml(config: &ExperimentConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CoreResult<()> {
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CoreError::Data(format!("{name} serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| CoreError::Io { path, source: e })
}

// ---------------------------------------------------------------- synth-data

pub fn synth_data(config: &ExperimentConfig, out: &Path) -> CoreResult<()> {
    config.validate()?;
    ensure_dir(out)?;
    let studies = write_toy_dataset(out, config.data.n, config.seeds.data)?;
    config.persist(out)?;
    Manifest::new("synth-data", &config_toml(config))
        .seed("data", config.seeds.data)
        .write(out)?;
    println!(
        "wrote {} toy studies ({} frontal) to {}",
        studies.len(),
        studies
            .iter()
            .filter(|s| s.view == radcycle_core::data::View::Frontal)
            .count(),
        out.display()
    );
    Ok(())
}

// --------------------------------------------------------------------- ingest

pub fn ingest(config: &ExperimentConfig, data: &Path, out: &Path) -> CoreResult<()> {
    config.validate()?;
    ensure_dir(out)?;
    let ingested = parse_study_collection(data)?;
    if ingested.skipped_missing_report > 0 {
        eprintln!(
            "warning: skipped {} image(s) with no referencing report",
            ingested.skipped_missing_report
        );
    }
    let studies = if config.data.frontal_only {
        filter_frontal(ingested.studies)
    } else {
        ingested.studies
    };
    // studies whose caption is empty are excluded with a count
    let mut excluded = 0usize;
    let studies: Vec<_> = studies
        .into_iter()
        .filter(|s| {
            if extract_caption(&s.report).is_ok() {
                true
            } else {
                excluded += 1;
                false
            }
        })
        .collect();
    if excluded > 0 {
        eprintln!("warning: excluded {excluded} study(ies) with empty captions");
    }

    let (train, test) = split_train_test(studies, config.data.ratio, config.seeds.split)?;
    let captions: Vec<String> = train
        .iter()
        .map(|s| extract_caption(&s.report))
        .collect::<CoreResult<_>>()?;
    let vocab = build_vocabulary(&captions, config.data.min_freq)?;
    vocab.save(&out.join("vocab.tsv"))?;

    let write_ids = |name: &str, studies: &[radcycle_core::data::XRayStudy]| -> CoreResult<()> {
        let path = out.join(name);
        let text = studies
            .iter()
            .map(|s| s.study_id.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&path, text + "\n").map_err(|e| CoreError::Io { path, source: e })
    };
    write_ids("train_ids.txt", &train)?;
    write_ids("test_ids.txt", &test)?;

    let work = WorkFile {
        schema_version: WORK_SCHEMA_VERSION,
        data_root: data.to_path_buf(),
        train_count: train.len(),
        test_count: test.len(),
        excluded_empty_caption: excluded,
        skipped_missing_report: ingested.skipped_missing_report,
    };
    write_json(out, "work.json", &work)?;
    config.persist(out)?;
    Manifest::new("ingest", &config_toml(config))
        .seed("split", config.seeds.split)
        .input_tree("dataset", data)?
        .write(out)?;
    println!(
        "ingested {} train / {} test studies, vocabulary {} tokens",
        train.len(),
        test.len(),
        vocab.len()
    );
    Ok(())
}

// --------------------------------------------------------------- train-report

pub fn train_report(config: &ExperimentConfig, work_dir: &Path, out: &Path) -> CoreResult<()> {
    config.validate()?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let (report_config, _) = model_configs(config.profile, ws.vocab.len());
    let mut model = ReportGenModel::new(report_config, config.seeds.report)?;
    let trace = train_report_generator(
        &mut model,
        &ws.train_pairs,
        config.train.report_epochs,
        config.seeds.report,
    )?;
    model.to_checkpoint().save(&out.join("report.ckpt"))?;
    write_json(out, "trace.json", &serde_json::json!({ "loss": trace }))?;
    config.persist(out)?;
    Manifest::new("train-report", &config_toml(config))
        .seed("report", config.seeds.report)
        .input_tree("work", work_dir)?
        .write(out)?;
    println!(
        "trained report generator for {} epochs (loss {:.4} -> {:.4})",
        trace.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------- train-image

pub fn train_image(
    config: &ExperimentConfig,
    work_dir: &Path,
    stage_index: usize,
    stage1_ckpt: Option<&Path>,
    out: &Path,
) -> CoreResult<()> {
    config.validate()?;
    let stage = Stage::from_index(stage_index)?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let (_, image_config) = model_configs(config.profile, ws.vocab.len());
    let (mut model, epochs) = match stage {
        Stage::One => (
            ImageGenModel::new(image_config, config.seeds.image)?,
            config.train.stage1_epochs,
        ),
        Stage::Two => {
            let path = stage1_ckpt.ok_or_else(|| {
                CoreError::Precondition(
                    "stage 2 needs --stage1-ckpt pointing at the stage-1 checkpoint".into(),
                )
            })?;
            (
                ImageGenModel::from_checkpoint(&Checkpoint::load(path)?)?,
                config.train.stage2_epochs,
            )
        }
    };
    let trace = train_image_generator(&mut model, &ws.train_pairs, stage, epochs, config.seeds.image)?;
    model.to_checkpoint().save(&out.join("image.ckpt"))?;
    write_json(out, "trace.json", &trace)?;
    config.persist(out)?;
    let mut manifest = Manifest::new("train-image", &config_toml(config))
        .seed("image", config.seeds.image)
        .input_tree("work", work_dir)?;
    if let Some(path) = stage1_ckpt {
        manifest = manifest.input_file("stage1_checkpoint", path)?;
    }
    manifest.write(out)?;
    println!(
        "trained image generator stage {stage_index} for {} epochs (D {:.4}, G adv {:.4}, G l1 {:.4})",
        trace.d_loss.len(),
        trace.d_loss.last().copied().unwrap_or(f64::NAN),
        trace.g_adversarial.last().copied().unwrap_or(f64::NAN),
        trace.g_l1.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------- train-cycle

pub fn train_cycle_cmd(
    config: &ExperimentConfig,
    work_dir: &Path,
    report_ckpt: &Path,
    image_ckpt: &Path,
    out: &Path,
) -> CoreResult<()> {
    config.validate()?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let mut report_model = ReportGenModel::from_checkpoint(&Checkpoint::load(report_ckpt)?)?;
    let mut image_model = ImageGenModel::from_checkpoint(&Checkpoint::load(image_ckpt)?)?;
    let cycle_config = CycleConfig {
        lambda_cycle_image: config.train.lambda_cycle_image,
        lambda_cycle_text: config.train.lambda_cycle_text,
        epochs: config.train.cycle_epochs,
        seed: config.seeds.cycle,
        ..CycleConfig::default()
    };
    cycle_config.validate()?;
    let trace = train_cycle(
        &mut report_model,
        &mut image_model,
        &ws.train_pairs,
        &cycle_config,
        &ws.vocab,
    )?;
    report_model.to_checkpoint().save(&out.join("report.ckpt"))?;
    image_model.to_checkpoint().save(&out.join("image.ckpt"))?;

    // training-run manifest: config, seeds, checkpoint ids, per-epoch losses
    let run = serde_json::json!({
        "schema_version": 1,
        "cycle_config": cycle_config,
        "seeds": { "cycle": config.seeds.cycle },
        "input_checkpoints": {
            "report": crate::manifest::sha256_hex(&std::fs::read(report_ckpt)
                .map_err(|e| CoreError::Io { path: report_ckpt.to_path_buf(), source: e })?),
            "image": crate::manifest::sha256_hex(&std::fs::read(image_ckpt)
                .map_err(|e| CoreError::Io { path: image_ckpt.to_path_buf(), source: e })?),
        },
        "trace": trace,
    });
    write_json(out, "cycle_run.json", &run)?;
    config.persist(out)?;
    Manifest::new("train-cycle", &config_toml(config))
        .seed("cycle", config.seeds.cycle)
        .input_tree("work", work_dir)?
        .input_file("report_checkpoint", report_ckpt)?
        .input_file("image_checkpoint", image_ckpt)?
        .write(out)?;
    println!(
        "cycle-trained for {} epochs (image cycle {:.4} -> {:.4}, report agreement {:.3})",
        trace.image_cycle.len(),
        trace.image_cycle.first().copied().unwrap_or(f64::NAN),
        trace.image_cycle.last().copied().unwrap_or(f64::NAN),
        trace.report_agreement.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ------------------------------------------------------------------- helpers

fn load_models(
    report_ckpt: &Path,
    image_ckpt: &Path,
) -> CoreResult<(ReportGenModel, ImageGenModel)> {
    Ok((
        ReportGenModel::from_checkpoint(&Checkpoint::load(report_ckpt)?)?,
        ImageGenModel::from_checkpoint(&Checkpoint::load(image_ckpt)?)?,
    ))
}

fn toy_classifier(config: &ExperimentConfig, ws: &Workspace) -> CoreResult<ToyImageClassifier> {
    if config.profile != Profile::Toy {
        return Err(CoreError::Config(
            "the full profile needs an external multi-label classifier; only the toy surrogate is bundled"
                .into(),
        ));
    }
    train_toy_image_classifier(
        &ws.train_studies,
        ToyClassifierConfig {
            seed: config.seeds.classifier,
            ..ToyClassifierConfig::default()
        },
    )
}

fn toy_report_classifier(ws: &Workspace) -> CoreResult<ReportClassifier> {
    let docs: Vec<(Vec<String>, LabelSet)> = ws
        .train_pairs
        .iter()
        .map(|p| {
            let labels = labels_from_caption(&p.caption);
            (
                p.tokens.content_tokens(&ws.vocab),
                LabelSet::from_shape_presence(presence(&labels)),
            )
        })
        .collect();
    ReportClassifier::train(&docs)
}

// ------------------------------------------------------------------- evaluate

pub fn evaluate(
    config: &ExperimentConfig,
    work_dir: &Path,
    report_ckpt: &Path,
    image_ckpt: &Path,
    out: &Path,
) -> CoreResult<()> {
    config.validate()?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let (report_model, image_model) = load_models(report_ckpt, image_ckpt)?;
    report_model.check_vocabulary(&ws.vocab)?;
    image_model.check_vocabulary(&ws.vocab)?;

    // natural-language metrics: generated vs reference captions
    let mut bleu_sums = [0.0f64; 4];
    let mut rouge_sum = 0.0;
    for pair in &ws.test_pairs {
        let generated = report_model.generate_report(&pair.image, &ws.vocab)?;
        let cand = generated.content_ids();
        let reference = pair.tokens.content_ids();
        for (i, sum) in bleu_sums.iter_mut().enumerate() {
            *sum += bleu_n(&cand, &reference, i + 1);
        }
        rouge_sum += rouge_l(&cand, &reference);
    }
    let n = ws.test_pairs.len() as f64;

    // image agreement metrics through the bundled classifier
    let classifier = toy_classifier(config, &ws)?;
    let pairs = radcycle_core::explain::regeneration_label_pairs(
        &report_model,
        &image_model,
        &classifier,
        &ws.test_pairs,
        &ws.vocab,
    )?;
    let mut bundle = MetricsBundle::empty().with_agreement(&pairs, &[2, 5, 8])?;
    for (i, sum) in bleu_sums.iter().enumerate() {
        bundle.bleu.insert((i + 1).to_string(), sum / n);
    }
    bundle.rouge = rouge_sum / n;
    bundle.notes = format!(
        "corpus BLEU = mean of sentence-level scores (eps=1e-9 smoothing); ROUGE-L F1; classifier: {}",
        classifier.descriptor()
    );
    if !bundle.is_finite() {
        return Err(CoreError::Data("metrics bundle contains non-finite values".into()));
    }

    write_json(out, "metrics.json", &bundle)?;
    let csv_path = out.join("metrics.csv");
    std::fs::write(&csv_path, bundle.csv())
        .map_err(|e| CoreError::Io { path: csv_path, source: e })?;

    // per-study label scores for both sides of each pair
    let mut real_csv = String::from("study_id,");
    real_csv.push_str(&LABELS.join(","));
    real_csv.push('\n');
    let mut gen_csv = real_csv.clone();
    for (pair, (real, gen)) in ws.test_pairs.iter().zip(pairs.iter()) {
        real_csv.push_str(&real.csv_row(&pair.study_id));
        real_csv.push('\n');
        gen_csv.push_str(&gen.csv_row(&pair.study_id));
        gen_csv.push('\n');
    }
    for (name, text) in [("scores_real.csv", real_csv), ("scores_generated.csv", gen_csv)] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| CoreError::Io { path, source: e })?;
    }

    config.persist(out)?;
    Manifest::new("evaluate", &config_toml(config))
        .seed("classifier", config.seeds.classifier)
        .input_tree("work", work_dir)?
        .input_file("report_checkpoint", report_ckpt)?
        .input_file("image_checkpoint", image_ckpt)?
        .write(out)?;

    println!("report quality over {} held-out studies:", ws.test_pairs.len());
    for i in 1..=4 {
        println!("  BLEU-{i}  {:.3}", bundle.bleu[&i.to_string()]);
    }
    println!("  ROUGE   {:.3}", bundle.rouge);
    println!("image agreement (real vs regenerated):");
    for k in [2, 5, 8] {
        let key = k.to_string();
        println!(
            "  k={k}: top-k {:.2}  P@k {:.2}  R@k {:.2}",
            bundle.top_k[&key], bundle.precision_at_k[&key], bundle.recall_at_k[&key]
        );
    }
    println!("  KL divergence {:.4}", bundle.kl_mean);
    Ok(())
}

// ---------------------------------------------------------------------- trust

pub fn trust(
    config: &ExperimentConfig,
    work_dir: &Path,
    report_ckpt: &Path,
    image_ckpt: &Path,
    out: &Path,
) -> CoreResult<()> {
    config.validate()?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let (report_model, image_model) = load_models(report_ckpt, image_ckpt)?;
    let nb = toy_report_classifier(&ws)?;
    nb.save(&out.join("report_classifier.json"))?;
    let oracle = ModelOracles {
        report_model: &report_model,
        image_model: &image_model,
        vocab: &ws.vocab,
    };
    let protocol = trust_evaluation(&oracle, &ws.test_pairs, &nb, &ws.vocab)?;
    write_json(out, "trust.json", &protocol)?;
    config.persist(out)?;
    Manifest::new("trust", &config_toml(config))
        .input_tree("work", work_dir)?
        .input_file("report_checkpoint", report_ckpt)?
        .input_file("image_checkpoint", image_ckpt)?
        .write(out)?;

    println!("per-label accuracy (ground-truth vs second-hop reports):");
    print!("  label:   ");
    for name in LABELS {
        print!(" {:>6}", name.split_whitespace().next().unwrap_or(name));
    }
    println!();
    print!("  accuracy:");
    for acc in &protocol.baseline.per_label_accuracy {
        print!(" {acc:>6.2}");
    }
    println!();
    println!("  {}", protocol.verdict_detail);
    Ok(())
}

// --------------------------------------------------------------- faithfulness

pub fn faithfulness(
    config: &ExperimentConfig,
    work_dir: &Path,
    report_ckpt: &Path,
    image_ckpt: &Path,
    k: usize,
    out: &Path,
) -> CoreResult<()> {
    config.validate()?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let (report_model, image_model) = load_models(report_ckpt, image_ckpt)?;
    let classifier = toy_classifier(config, &ws)?;
    let protocol = faithfulness_evaluation(
        &report_model,
        &image_model,
        &classifier,
        &ws.test_pairs,
        k,
        config.seeds.protocol,
        &ws.vocab,
    )?;
    write_json(out, "faithfulness.json", &protocol)?;
    config.persist(out)?;
    Manifest::new("faithfulness", &config_toml(config))
        .seed("protocol", config.seeds.protocol)
        .seed("classifier", config.seeds.classifier)
        .input_tree("work", work_dir)?
        .input_file("report_checkpoint", report_ckpt)?
        .input_file("image_checkpoint", image_ckpt)?
        .write(out)?;
    println!(
        "faithfulness: {} ({})",
        if protocol.verdict_passed { "PASS" } else { "FAIL" },
        protocol.verdict_detail
    );
    Ok(())
}

// -------------------------------------------------------------------- gradcam

pub fn gradcam_cmd(
    config: &ExperimentConfig,
    work_dir: &Path,
    report_ckpt: &Path,
    image_ckpt: &Path,
    count: usize,
    out: &Path,
) -> CoreResult<()> {
    config.validate()?;
    let ws = workspace::load(work_dir, config)?;
    ensure_dir(out)?;
    let (report_model, image_model) = load_models(report_ckpt, image_ckpt)?;
    let classifier = toy_classifier(config, &ws)?;

    let mut stats = Vec::new();
    for pair in ws.test_pairs.iter().take(count) {
        let report = report_model.generate_report(&pair.image, &ws.vocab)?;
        let (_, refined) = image_model.generate_from_report(&report, &ws.vocab)?;
        let regen = refined.resize_bilinear(pair.image.height(), pair.image.width())?;
        for (tag, image) in [("real", &pair.image), ("generated", &regen)] {
            let scores = classifier.classify(image)?;
            let mut order: Vec<usize> = (0..LABELS.len()).collect();
            order.sort_by(|&a, &b| scores.0[b].partial_cmp(&scores.0[a]).unwrap().then(a.cmp(&b)));
            let mut entries = Vec::new();
            for &label in order.iter().take(3) {
                let map = gradcam(&classifier, image, label)?;
                let overlay = render_overlay(image, &map);
                let label_slug = LABELS[label].to_lowercase().replace(' ', "_");
                let name = match tag {
                    "real" => format!("{}_{label_slug}_cam.png", pair.study_id),
                    _ => format!("{}_gen_{label_slug}_cam.png", pair.study_id),
                };
                overlay.save_png(&out.join(&name))?;
                entries.push(serde_json::json!({
                    "label": LABELS[label],
                    "score": scores.0[label],
                    "quadrant_mass": map.quadrant_mass(),
                    "overlay": name,
                }));
            }
            stats.push(serde_json::json!({
                "study_id": pair.study_id,
                "image": tag,
                "top3": entries,
            }));
        }
    }
    write_json(out, "gradcam.json", &serde_json::json!({ "studies": stats }))?;
    config.persist(out)?;
    Manifest::new("gradcam", &config_toml(config))
        .seed("classifier", config.seeds.classifier)
        .input_tree("work", work_dir)?
        .input_file("report_checkpoint", report_ckpt)?
        .input_file("image_checkpoint", image_ckpt)?
        .write(out)?;
    println!(
        "wrote Grad-CAM overlays for {} study/image pairs to {}",
        stats.len(),
        out.display()
    );
    Ok(())
}
