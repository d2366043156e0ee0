use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use alesal_core::eval::{Dmlp, DmlpConfig, EvalReport};
use alesal_core::experiment::{ordering_violations, run_study, runs_to_csv, variant_mean, StudyData, Variant};
use alesal_core::model::{argmax, fit, Trainable, WindowInput};
use alesal_core::nn::Checkpoint;
use alesal_core::pipeline::{class_counts, split_inputs, synthetic_examples, LabeledExample};
use alesal_core::{AlesalModel, DatasetConfig, PreprocessParams, SleepClass};
use anyhow::{bail, Context, Result};

use crate::data::{emit, load_examples, read_session_dir, write_features, write_synthetic};
use crate::{AblateCmd, Arch, Command, EvalArgs, InferArgs, InspectArgs, PreprocessCmd, Settings, SynthArgs, TrainCmd};

pub(crate) fn dispatch(cmd: Command, settings: Settings) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, settings),
        Command::Preprocess(a) => preprocess(a, settings),
        Command::Train(a) => train(a, settings),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Ablate(a) => ablate(a, settings),
        Command::InspectAttention(a) => inspect(a, settings),
    }
}

enum Classifier {
    Alesal(AlesalModel),
    Dmlp(Dmlp),
}

impl Classifier {
    fn predict_proba(&self, inputs: &[&WindowInput]) -> Result<Vec<[f64; 3]>> {
        Ok(match self {
            Classifier::Alesal(m) => m.predict_proba(inputs)?,
            Classifier::Dmlp(m) => m.predict_proba(inputs)?,
        })
    }
}

const PREPROCESS_ENTRY: &str = "preprocess";

fn save_model(path: &Path, mut ck: Checkpoint, params: &PreprocessParams) -> Result<()> {
    ck.add_text(PREPROCESS_ENTRY, &serde_json::to_string(params)?)?;
    ck.write_file(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<(Classifier, PreprocessParams)> {
    let ck = Checkpoint::read_file(path).with_context(|| format!("reading {}", path.display()))?;
    let params = if ck.contains(PREPROCESS_ENTRY) {
        serde_json::from_str(&ck.text(PREPROCESS_ENTRY)?).context("checkpoint preprocessing parameters")?
    } else {
        PreprocessParams::default()
    };
    let model = match ck.text("kind")?.as_str() {
        "dmlp" => Classifier::Dmlp(Dmlp::from_checkpoint(&ck)?),
        _ => Classifier::Alesal(AlesalModel::from_checkpoint(&ck)?),
    };
    Ok((model, params))
}

fn labeled(examples: &[LabeledExample], path: &Path) -> Result<(Vec<WindowInput>, Vec<usize>)> {
    let (inputs, labels) = split_inputs(examples).with_context(|| format!("{} must be labeled", path.display()))?;
    Ok((inputs.into_iter().cloned().collect(), labels))
}

fn synth(a: SynthArgs, mut s: Settings) -> Result<()> {
    s.apply_synth(&a);
    let manifest = write_synthetic(&a.out, &s.dataset, s.seed)?;
    println!("wrote {} sessions ({:?} per class) to {}", manifest.sessions.len(), s.dataset.per_class, a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessCmd, mut s: Settings) -> Result<()> {
    s.apply_preprocess(&a.preprocess);
    let examples = read_session_dir(&a.data, &s.preprocess)?;
    write_features(&a.out, &examples, &s.preprocess)?;
    println!("wrote {} windows (per class {:?}) to {}", examples.len(), class_counts(&examples), a.out.display());
    Ok(())
}

fn train(a: TrainCmd, mut s: Settings) -> Result<()> {
    s.apply_preprocess(&a.preprocess);
    s.apply_model(&a.model);
    s.apply_train(&a.train);
    let (examples, params) = load_examples(&a.data, &s.preprocess)?;
    let (inputs, labels) = labeled(&examples, &a.data)?;
    let pairs = inputs[0].pairs();
    let (history, ck) = match a.arch {
        Arch::Alesal => {
            let mut model = AlesalModel::new(s.model_for(&params, pairs)?, s.seed)?;
            let h = fit(&mut model, &inputs, &labels, &s.train)?;
            (h, model.to_checkpoint()?)
        }
        Arch::Dmlp => {
            let dim = pairs * params.series_len()?;
            let mut model = Dmlp::new(DmlpConfig { input_dim: dim, ..DmlpConfig::default() }, s.seed)?;
            let h = fit(&mut model, &inputs, &labels, &s.train)?;
            (h, model.to_checkpoint()?)
        }
    };
    save_model(&a.out, ck, &params)?;
    if let Some(p) = &a.history {
        fs::write(p, serde_json::to_string_pretty(&history)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    let best = &history.epochs[history.best_epoch - 1];
    println!(
        "trained on {} windows for {} epochs{}; kept epoch {} (train acc {:.4}, val acc {})",
        history.train_indices.len(),
        history.epochs.len(),
        if history.stopped_early { " (early stop)" } else { "" },
        history.best_epoch,
        best.train_accuracy,
        best.val_accuracy.map_or("n/a".to_string(), |v| format!("{v:.4}")),
    );
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, params) = load_model(&a.model)?;
    let (examples, _) = load_examples(&a.data, &params)?;
    let (inputs, labels) = split_inputs(&examples).with_context(|| format!("{} must be labeled", a.data.display()))?;
    let predicted: Vec<usize> = model.predict_proba(&inputs)?.iter().map(argmax).collect();
    let report = EvalReport::from_predictions(&labels, &predicted)?;
    emit(a.out.as_deref(), &report.to_csv())?;
    // Keep stdout machine-readable when the CSV goes there.
    if a.out.is_some() {
        println!("{}", report.summary());
    } else {
        eprintln!("{}", report.summary());
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut failed = Vec::new();
    if let Some(min) = a.min_accuracy {
        if 100.0 * report.accuracy < min {
            failed.push(format!("accuracy {:.2}% below {min}", 100.0 * report.accuracy));
        }
    }
    if let Some(min) = a.min_f1 {
        if report.weighted_f1 < min {
            failed.push(format!("weighted F1 {:.2} below {min}", report.weighted_f1));
        }
    }
    if !failed.is_empty() {
        bail!("evalkit: metric floor not met: {}", failed.join(", "));
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let (model, params) = load_model(&a.model)?;
    let (examples, _) = load_examples(&a.data, &params)?;
    let inputs: Vec<&WindowInput> = examples.iter().map(|e| &e.input).collect();
    let probs = model.predict_proba(&inputs)?;
    let mut csv = String::from("window_id,predicted,p_normal,p_apnea,p_plmd\n");
    for (e, p) in examples.iter().zip(&probs) {
        let class = SleepClass::from_index(argmax(p)).expect("three classes");
        let _ = writeln!(csv, "{},{},{},{},{}", e.window_id, class, p[0], p[1], p[2]);
    }
    emit(a.out.as_deref(), &csv)?;
    if a.out.is_some() {
        println!("{} windows classified", examples.len());
    }
    Ok(())
}

fn ablate(a: AblateCmd, mut s: Settings) -> Result<()> {
    s.apply_preprocess(&a.preprocess);
    s.apply_model(&a.model);
    s.apply_train(&a.train);
    let variants = a.variants.iter().map(|v| v.parse::<Variant>()).collect::<alesal_core::Result<Vec<_>>>()?;
    if a.seeds == 0 {
        bail!("--seeds must be positive");
    }
    let (train_ex, params) = load_examples(&a.train_data, &s.preprocess)?;
    let (test_ex, test_params) = load_examples(&a.test_data, &s.preprocess)?;
    if params != test_params {
        bail!("train and test data were preprocessed differently");
    }
    let (train_x, train_y) = labeled(&train_ex, &a.train_data)?;
    let (test_x, test_y) = labeled(&test_ex, &a.test_data)?;
    let base = s.model_for(&params, train_x[0].pairs())?;
    let seeds: Vec<u64> = (0..a.seeds).map(|k| s.seed + k).collect();
    let data = StudyData { train: &train_x, train_labels: &train_y, test: &test_x, test_labels: &test_y };
    let runs = run_study(&variants, &seeds, &base, &s.train, &data)?;
    emit(a.out.as_deref(), &runs_to_csv(&runs))?;
    let mut summary = String::from("variant         mean acc  mean wF1\n");
    for v in &variants {
        if let Some((acc, f1)) = variant_mean(&runs, &v.to_string()) {
            let _ = writeln!(summary, "{:<15} {:>8.4}  {:>8.2}", v.to_string(), acc, f1);
        }
    }
    let attention = Variant::ATTENTION.iter().all(|v| variants.contains(v));
    if attention {
        let violations = ordering_violations(&runs);
        if violations.is_empty() {
            summary.push_str("ablation ordering holds on the seed means\n");
        } else {
            // Stochastic expectation: reported, not fatal.
            for v in violations {
                let _ = writeln!(summary, "ordering violated: {v}");
            }
        }
    }
    if a.out.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

fn inspect(a: InspectArgs, s: Settings) -> Result<()> {
    let (model, params) = load_model(&a.model)?;
    let Classifier::Alesal(model) = model else {
        bail!("model: {} has no attention blocks", a.model.display());
    };
    let examples = match &a.data {
        Some(path) => load_examples(path, &params)?.0,
        None => {
            let cfg = DatasetConfig {
                per_class: [2, 2, 2],
                rate: params.rate,
                duration_sec: params.window_sec,
                pairs: model.config.pairs,
                ..s.dataset.clone()
            };
            synthetic_examples(&cfg, &params, s.seed)?
        }
    };
    let selected: Vec<&LabeledExample> = match a.window {
        Some(id) => {
            let e = examples.iter().filter(|e| e.window_id == id).collect::<Vec<_>>();
            if e.is_empty() {
                bail!("window {id} not found ({} windows available)", examples.len());
            }
            e
        }
        None => examples.iter().collect(),
    };
    let mut ta = String::from("window_id,pair,frame_i,frame_j,weight\n");
    let mut pa = String::from("window_id,channel,weight\n");
    for chunk in selected.chunks(64) {
        let inputs: Vec<&WindowInput> = chunk.iter().map(|e| &e.input).collect();
        for (e, pred) in chunk.iter().zip(model.predict_batch(&inputs)?) {
            for (p, att) in pred.time_attention.iter().flatten().enumerate() {
                let [rows, cols] = [att.shape()[0], att.shape()[1]];
                for i in 0..rows {
                    for j in 0..cols {
                        let _ = writeln!(ta, "{},{p},{i},{j},{}", e.window_id, att.data()[i * cols + j]);
                    }
                }
            }
            for (c, w) in pred.pair_weights.iter().flatten().enumerate() {
                let _ = writeln!(pa, "{},{c},{w}", e.window_id);
            }
            println!("window {}: predicted {} ({:.3} / {:.3} / {:.3})", e.window_id, pred.class, pred.probs[0], pred.probs[1], pred.probs[2]);
        }
    }
    fs::create_dir_all(&a.out_dir)?;
    let ta_path = a.out_dir.join("time_attention.csv");
    let pa_path = a.out_dir.join("pair_attention.csv");
    fs::write(&ta_path, ta)?;
    fs::write(&pa_path, pa)?;
    println!("wrote {} and {}", ta_path.display(), pa_path.display());
    Ok(())
}
