use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use lmkit_core::config::{Strategy, TrainingConfig};
use lmkit_core::corpus::{
    load_annotated, load_corpus, split_dataset, split_report, stratified_relation_split, AnnotatedDocument,
    RelationInventory, SplitSpec, Splits,
};
use lmkit_core::eval::{load_probes, masked_token_accuracy, pseudo_log_likelihood};
use lmkit_core::finetune::FinetuneOutcome;
use lmkit_core::hpo::{run_trials, GridSpace, TrialScore};
use lmkit_core::io::{read_json, read_jsonl, read_utf8, write_json, write_jsonl};
use lmkit_core::model::{load_checkpoint, save_checkpoint, ModelConfig};
use lmkit_core::ner::{evaluate_ner, finetune_ner, predict_documents, PredictedEntity};
use lmkit_core::pretrain::{run_pretraining, MaskingPolicy, Start};
use lmkit_core::relation::{evaluate_re_detailed, evaluate_re_predicted_pairs, finetune_re};
use lmkit_core::tokenizer::{train_wordpiece, Vocab};
use lmkit_core::Error;

use crate::manifest::{manifest_path, Manifest};
use crate::{parse, Cli, CliError, CliResult, Command, Task};

/// What a command produced.
struct Outcome {
    report: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
}

/// Predicted entities of one document, as written by `eval-ner --predictions`.
#[derive(Debug, Serialize, Deserialize)]
struct EntityLine {
    doc_id: String,
    entities: Vec<PredictedEntity>,
}

#[derive(Debug, Serialize)]
struct PllLine {
    line: usize,
    sentence: String,
    pll: f64,
}

#[derive(Debug, Serialize)]
struct Timing {
    index: usize,
    wall_time_secs: f64,
}

pub fn execute(cli: Cli, args: Vec<String>) -> CliResult<Value> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    let name = cli.command.name();
    let seed = cli.seed;
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest);
    }
    let out = pool.install(|| dispatch(cli.command, seed))?;
    Manifest::build(name, &args, seed, &out.inputs, &out.outputs)?.save(&out.manifest)?;
    Ok(out.report)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn annotated_splits(train: &Path, validation: Option<&Path>, test: Option<&Path>) -> CliResult<Splits<AnnotatedDocument>> {
    let load = |p: Option<&Path>| -> CliResult<Vec<AnnotatedDocument>> {
        Ok(match p {
            Some(p) => load_annotated(p)?,
            None => Vec::new(),
        })
    };
    Ok(Splits {
        train: load(Some(train))?,
        test: load(test)?,
        validation: load(validation)?,
    })
}

fn save_finetune(out_dir: &Path, outcome: &FinetuneOutcome, outputs: &mut Vec<PathBuf>) -> CliResult<Value> {
    let model = out_dir.join("model.ckpt");
    save_checkpoint(&outcome.checkpoint, &model)?;
    outputs.push(model);
    let history = out_dir.join("history.jsonl");
    write_jsonl(&history, &outcome.history)?;
    outputs.push(history);
    if let Some(report) = &outcome.report {
        let path = out_dir.join("report.json");
        write_json(&path, report)?;
        outputs.push(path);
    }
    Ok(json!({
        "best_epoch": outcome.best_epoch,
        "history": outcome.history,
        "validation": outcome.report,
    }))
}

fn dispatch(command: Command, seed: u64) -> CliResult<Outcome> {
    match command {
        Command::TrainTokenizer {
            corpus,
            vocab_size,
            min_frequency,
            out,
        } => {
            let loaded = load_corpus(&corpus)?;
            let vocab = train_wordpiece(loaded.documents.iter().map(|d| d.text.as_str()), vocab_size, min_frequency)?;
            vocab.save(&out)?;
            Ok(Outcome {
                report: json!({
                    "documents": loaded.documents.len(),
                    "skipped": loaded.skipped,
                    "vocab_size": vocab.len(),
                    "fingerprint": vocab.fingerprint(),
                }),
                inputs: vec![corpus],
                manifest: manifest_path(&out, false),
                outputs: vec![out],
            })
        }

        Command::Pretrain {
            strategy,
            corpus,
            vocab,
            init_checkpoint,
            model_config,
            multilingual,
            hyper,
            out_dir,
        } => {
            let mut config = hyper.apply(TrainingConfig::pretrain_reference(strategy, multilingual), seed);
            config.init_checkpoint = init_checkpoint.clone();
            config.validate_pretrain()?;
            if strategy == Strategy::FurtherPretrain && model_config.is_some() {
                return Err(CliError::Usage("--model-config applies to strategy SC only".into()));
            }
            let v = Vocab::load(&vocab)?;
            let docs: Vec<String> = load_corpus(&corpus)?.documents.into_iter().map(|d| d.text).collect();
            let mut inputs = vec![corpus, vocab];
            let start = match (&init_checkpoint, &model_config) {
                (Some(path), _) => {
                    inputs.push(path.clone());
                    Start::Further(load_checkpoint(path)?)
                }
                (None, Some(path)) => {
                    inputs.push(path.clone());
                    Start::Scratch(read_json::<ModelConfig>(path)?)
                }
                (None, None) => Start::Scratch(ModelConfig::desk(v.len())),
            };
            let outcome = run_pretraining(&docs, &v, start, &config, &MaskingPolicy::default())?;
            let latest = out_dir.join("latest.ckpt");
            let best = out_dir.join("best.ckpt");
            let history = out_dir.join("history.jsonl");
            save_checkpoint(&outcome.latest, &latest)?;
            save_checkpoint(&outcome.best, &best)?;
            write_jsonl(&history, &outcome.history)?;
            Ok(Outcome {
                report: json!({
                    "strategy": strategy,
                    "config": config,
                    "history": outcome.history,
                    "steps": outcome.latest.provenance.steps,
                }),
                inputs,
                manifest: manifest_path(&out_dir, true),
                outputs: vec![latest, best, history],
            })
        }

        Command::SplitData {
            data,
            stratify,
            inventory,
            train_ratio,
            test_ratio,
            validation_ratio,
            out_dir,
        } => {
            let docs = load_annotated(&data)?;
            let spec = SplitSpec {
                train_ratio,
                test_ratio,
                validation_ratio,
                seed,
            };
            let splits = if stratify {
                stratified_relation_split(&docs, &spec)?
            } else {
                split_dataset(&docs, &spec)?
            };
            let mut inputs = vec![data];
            let inv = match &inventory {
                Some(p) => {
                    inputs.push(p.clone());
                    Some(RelationInventory::load(p)?)
                }
                None => None,
            };
            let report = split_report(&splits, inv.as_ref());
            let mut outputs = Vec::new();
            for (name, part) in [("train", &splits.train), ("test", &splits.test), ("validation", &splits.validation)] {
                let p = out_dir.join(format!("{name}.jsonl"));
                write_jsonl(&p, part)?;
                outputs.push(p);
            }
            let rp = out_dir.join("split_report.json");
            write_json(&rp, &report)?;
            outputs.push(rp);
            Ok(Outcome {
                report: to_value(&report),
                inputs,
                manifest: manifest_path(&out_dir, true),
                outputs,
            })
        }

        Command::FinetuneNer {
            train,
            validation,
            vocab,
            init_checkpoint,
            hyper,
            out_dir,
        } => {
            let config = hyper.apply(TrainingConfig::ner_reference(), seed);
            let splits = annotated_splits(&train, validation.as_deref(), None)?;
            let v = Vocab::load(&vocab)?;
            let ckpt = load_checkpoint(&init_checkpoint)?;
            let outcome = finetune_ner(ckpt, &splits, &v, &config)?;
            let mut outputs = Vec::new();
            let report = save_finetune(&out_dir, &outcome, &mut outputs)?;
            let mut inputs = vec![train];
            inputs.extend(validation);
            inputs.extend([vocab, init_checkpoint]);
            Ok(Outcome {
                report,
                inputs,
                manifest: manifest_path(&out_dir, true),
                outputs,
            })
        }

        Command::FinetuneRe {
            train,
            validation,
            test,
            vocab,
            inventory,
            init_checkpoint,
            hyper,
            out_dir,
        } => {
            let config = hyper.apply(TrainingConfig::re_reference(), seed);
            let splits = annotated_splits(&train, validation.as_deref(), test.as_deref())?;
            let v = Vocab::load(&vocab)?;
            let inv = RelationInventory::load(&inventory)?;
            let ckpt = load_checkpoint(&init_checkpoint)?;
            let outcome = finetune_re(ckpt, &splits, &v, &inv, &config)?;
            let mut outputs = Vec::new();
            let report = save_finetune(&out_dir, &outcome, &mut outputs)?;
            let vp = out_dir.join("vocab.txt");
            v.with_markers().save(&vp)?;
            outputs.push(vp);
            let mut inputs = vec![train];
            inputs.extend(validation);
            inputs.extend(test);
            inputs.extend([vocab, inventory, init_checkpoint]);
            Ok(Outcome {
                report,
                inputs,
                manifest: manifest_path(&out_dir, true),
                outputs,
            })
        }

        Command::GridSearch {
            task,
            space,
            train,
            validation,
            vocab,
            init_checkpoint,
            inventory,
            subset,
            max_seq_len,
            out_dir,
        } => {
            let mut inputs = vec![train.clone(), validation.clone(), vocab.clone(), init_checkpoint.clone()];
            let grid = if space == "reference" {
                GridSpace::reference()
            } else {
                inputs.push(PathBuf::from(&space));
                read_json(Path::new(&space))?
            };
            let mut base = match task {
                Task::Ner => TrainingConfig::ner_reference(),
                Task::Re => TrainingConfig::re_reference(),
            };
            base.seed = seed;
            if let Some(m) = max_seq_len {
                base.max_sequence_length = m;
            }
            let mut points = grid.points(&base)?;
            if let Some(n) = subset {
                points.truncate(n);
            }
            let splits = annotated_splits(&train, Some(&validation), None)?;
            let v = Vocab::load(&vocab)?;
            let ckpt = load_checkpoint(&init_checkpoint)?;
            let inv = match (task, &inventory) {
                (Task::Re, Some(p)) => {
                    inputs.push(p.clone());
                    Some(RelationInventory::load(p)?)
                }
                (Task::Re, None) => return Err(CliError::Usage("grid-search --task re requires --inventory".into())),
                (Task::Ner, _) => None,
            };
            let outcome = run_trials(points, |config| {
                let out = match &inv {
                    Some(inv) => finetune_re(ckpt.clone(), &splits, &v, inv, config)?,
                    None => finetune_ner(ckpt.clone(), &splits, &v, config)?,
                };
                let report = out
                    .report
                    .ok_or_else(|| Error::config("grid search needs validation data"))?;
                Ok(TrialScore {
                    validation_f1: report.micro.f1,
                    evaluation_loss: report
                        .evaluation_loss
                        .ok_or_else(|| Error::config("validation produced no evaluation loss"))?,
                })
            })?;
            let trials = out_dir.join("trials.jsonl");
            write_jsonl(&trials, &outcome.trials)?;
            let best = out_dir.join("best_config.json");
            write_json(&best, &outcome.best.config)?;
            let timings: Vec<Timing> = outcome
                .trials
                .iter()
                .map(|t| Timing {
                    index: t.index,
                    wall_time_secs: t.wall_time_secs,
                })
                .collect();
            write_jsonl(&out_dir.join("timings.jsonl"), &timings)?;
            info!("trial log written to {}", trials.display());
            Ok(Outcome {
                report: json!({
                    "trials": outcome.trials.len(),
                    "failed": outcome.trials.iter().filter(|t| !t.succeeded()).count(),
                    "best": outcome.best,
                }),
                inputs,
                manifest: manifest_path(&out_dir, true),
                outputs: vec![trials, best],
            })
        }

        Command::EvalNer {
            checkpoint,
            vocab,
            data,
            predictions,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let v = Vocab::load(&vocab)?;
            ckpt.check_vocab(&v)?;
            let docs = load_annotated(&data)?;
            let report = evaluate_ner(&ckpt, &v, &docs)?;
            write_json(&out, &report)?;
            let mut outputs = vec![out.clone()];
            if let Some(p) = predictions {
                let lines: Vec<EntityLine> = docs
                    .iter()
                    .zip(predict_documents(&ckpt, &v, &docs)?)
                    .map(|(d, entities)| EntityLine {
                        doc_id: d.doc_id.clone(),
                        entities,
                    })
                    .collect();
                write_jsonl(&p, &lines)?;
                outputs.push(p);
            }
            Ok(Outcome {
                report: to_value(&report),
                inputs: vec![checkpoint, vocab, data],
                manifest: manifest_path(&out, false),
                outputs,
            })
        }

        Command::EvalRe {
            checkpoint,
            vocab,
            data,
            entities,
            predictions,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let v = Vocab::load(&vocab)?;
            ckpt.check_vocab(&v)?;
            let docs = load_annotated(&data)?;
            let mut inputs = vec![checkpoint, vocab, data];
            let mut outputs = vec![out.clone()];
            let report = match entities {
                Some(path) => {
                    if predictions.is_some() {
                        return Err(CliError::Usage("--predictions is only written under the gold-pair protocol".into()));
                    }
                    let lines: Vec<EntityLine> = read_jsonl(&path)?;
                    let predicted: BTreeMap<String, _> = lines
                        .into_iter()
                        .map(|l| (l.doc_id, l.entities.iter().map(PredictedEntity::mention).collect()))
                        .collect();
                    inputs.push(path);
                    evaluate_re_predicted_pairs(&ckpt, &v, &docs, &predicted)?
                }
                None => {
                    let (report, records) = evaluate_re_detailed(&ckpt, &v, &docs)?;
                    if let Some(p) = predictions {
                        write_jsonl(&p, &records)?;
                        outputs.push(p);
                    }
                    report
                }
            };
            write_json(&out, &report)?;
            Ok(Outcome {
                report: to_value(&report),
                inputs,
                manifest: manifest_path(&out, false),
                outputs,
            })
        }

        Command::MaskPredict {
            checkpoint,
            vocab,
            probes,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let v = Vocab::load(&vocab)?;
            ckpt.check_vocab(&v)?;
            let report = masked_token_accuracy(&ckpt, &load_probes(&probes)?, &v)?;
            write_json(&out, &report)?;
            Ok(Outcome {
                report: json!({
                    "overall": report.overall,
                    "categories": report.categories,
                    "excluded": report.excluded.len(),
                }),
                inputs: vec![checkpoint, vocab, probes],
                manifest: manifest_path(&out, false),
                outputs: vec![out],
            })
        }

        Command::PllScore {
            checkpoint,
            vocab,
            sentences,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let v = Vocab::load(&vocab)?;
            ckpt.check_vocab(&v)?;
            let text = read_utf8(&sentences)?;
            let lines: Vec<(usize, &str)> = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, l))
                .collect();
            let scored: Vec<PllLine> = lines
                .par_iter()
                .map(|&(line, s)| {
                    Ok(PllLine {
                        line,
                        sentence: s.to_string(),
                        pll: pseudo_log_likelihood(&ckpt, s, &v)?,
                    })
                })
                .collect::<Result<_, Error>>()?;
            write_jsonl(&out, &scored)?;
            Ok(Outcome {
                report: json!({
                    "sentences": scored.len(),
                    "mean_pll": scored.iter().map(|s| s.pll).sum::<f64>() / scored.len().max(1) as f64,
                }),
                inputs: vec![checkpoint, vocab, sentences],
                manifest: manifest_path(&out, false),
                outputs: vec![out],
            })
        }

        Command::Replay { .. } => unreachable!("handled in execute"),
    }
}

/// Checks the recorded inputs, re-runs the recorded arguments and compares
/// every output with its recorded digest.
fn replay(path: &Path) -> CliResult<Value> {
    let recorded = Manifest::load(path)?;
    for input in &recorded.inputs {
        let now = crate::manifest::FileDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Core(Error::InputContract(format!(
                "input {} changed since the recorded run",
                input.path.display()
            ))));
        }
    }
    let (cli, args) = parse(&recorded.args)?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    execute(cli, args)?;
    let mut artifacts = Vec::new();
    let mut mismatched = Vec::new();
    for output in &recorded.outputs {
        let now = crate::manifest::FileDigest::of(&output.path)?;
        let same = now.sha256 == output.sha256;
        if !same {
            mismatched.push(output.path.display().to_string());
        }
        artifacts.push(json!({ "path": output.path, "sha256": now.sha256, "identical": same }));
    }
    if !mismatched.is_empty() {
        return Err(CliError::ReplayMismatch(format!("replay produced different bytes for {}", mismatched.join(", "))));
    }
    Ok(json!({ "command": recorded.command, "identical": true, "artifacts": artifacts }))
}
