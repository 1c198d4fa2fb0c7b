use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use claimrank::corpus::{
    load_posts, select_text, ViewMode, FACT_CHECKS_FILE, MAPPING_FILE, POSTS_FILE,
};
use claimrank::encoder::{load_checkpoint, save_checkpoint, Encoder, Vocabulary};
use claimrank::ensemble::{fuse, load_run, save_run, ModelRun};
use claimrank::eval::{evaluate, read_predictions, write_predictions, GoldMapping};
use claimrank::index::{build_index, load_index, save_index};
use claimrank::pipeline::{embed_fact_checks, retrieve, run_pipeline, PipelineConfig};
use claimrank::training::{kfold_split, train, training_pairs};
use claimrank::{load_corpus, Corpus};

use crate::args::{Command, Global, Mode, TrainFlags};
use crate::config::Settings;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::UsageError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_CONFIG_FILE: &str = "model.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const INDEX_FILE: &str = "index.bin";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";

fn settings(global: &Global, flags: Option<&TrainFlags>) -> Result<Settings> {
    let mut s = Settings::for_mode(global.mode);
    if let Some(path) = &global.config {
        s.apply(&Settings::load(path)?)?;
    }
    if let Some(flags) = flags {
        s.apply_flags(flags)?;
    }
    if let Some(seed) = global.seed {
        s.train.seed = seed;
    }
    if global.mode == Mode::Crosslingual && s.view.mode != ViewMode::English {
        log::warn!("crosslingual mode always encodes the English view");
        s.view.mode = ViewMode::English;
    }
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn corpus_inputs(manifest: &mut RunManifest, data: &Path) -> Result<()> {
    for name in [FACT_CHECKS_FILE, POSTS_FILE, MAPPING_FILE] {
        manifest.input(&data.join(name))?;
    }
    Ok(())
}

fn save_model(encoder: &Encoder, settings: &Settings, dir: &Path) -> Result<()> {
    save_checkpoint(&encoder.params, &dir.join(CHECKPOINT_FILE))?;
    encoder.vocab.save(&dir.join(VOCAB_FILE))?;
    std::fs::write(
        dir.join(MODEL_CONFIG_FILE),
        toml::to_string(&settings.to_table())?,
    )?;
    Ok(())
}

fn load_model(dir: &Path) -> Result<(Settings, Encoder)> {
    let mut settings = Settings::for_mode(Mode::Multilingual);
    settings.apply(&Settings::load(&dir.join(MODEL_CONFIG_FILE))?)?;
    let params = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != params.shape.vocab_size {
        bail!(
            "{}: vocabulary has {} tokens but checkpoint expects {}",
            dir.display(),
            vocab.len(),
            params.shape.vocab_size
        );
    }
    let max_len = settings.train.max_len;
    Ok((
        settings,
        Encoder {
            vocab,
            params,
            max_len,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: u64,
    vector: Vec<f64>,
}

fn run_file(name: &str, lists: BTreeMap<u64, claimrank::RankedList>) -> ModelRun {
    ModelRun {
        name: name.into(),
        lists,
    }
}

fn check_k(k: usize) -> Result<usize> {
    if k == 0 {
        return Err(UsageError("k must be at least 1".into()).into());
    }
    Ok(k)
}

pub fn execute(command: Command, global: &Global) -> Result<()> {
    // Surfaces config errors as usage errors for every subcommand.
    settings(global, None)?;
    match command {
        Command::Ingest { data } => {
            let corpus = load_corpus(&data)?;
            print!("{}", corpus.stats());
        }

        Command::Train { data, out, flags } => {
            let s = settings(global, Some(&flags))?;
            let corpus = load_corpus(&data)?;
            create_dir(&out)?;
            let mut manifest = RunManifest::new("train", s.train.seed, s.to_table());
            corpus_inputs(&mut manifest, &data)?;
            for f in [
                CHECKPOINT_FILE,
                VOCAB_FILE,
                MODEL_CONFIG_FILE,
                TRAIN_LOG_FILE,
            ] {
                manifest.artifact(out.join(f));
            }
            manifest.write(&out.join(MANIFEST_FILE))?;
            let trained = train(&corpus, &s.view, &s.train, flags.fold)?;
            save_model(&trained.encoder, &s, &out)?;
            std::fs::write(out.join(TRAIN_LOG_FILE), trained.log.to_string())?;
            print!("{}", trained.log);
        }

        Command::Embed { model, data, out } => {
            let (s, encoder) = load_model(&model)?;
            let corpus = load_corpus(&data)?;
            let ids: BTreeSet<u64> = corpus.fact_checks().iter().map(|f| f.id).collect();
            let rows = embed_fact_checks(&encoder, &corpus, &s.view, &ids)?;
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(&out)
                    .with_context(|| format!("creating {}", out.display()))?,
            );
            for (id, vector) in rows {
                serde_json::to_writer(&mut file, &EmbeddingLine { id, vector })?;
                file.write_all(b"\n")?;
            }
            file.flush()?;
        }

        Command::BuildIndex { embeddings, out } => {
            let file = std::fs::File::open(&embeddings)
                .with_context(|| format!("reading {}", embeddings.display()))?;
            let mut entries = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: EmbeddingLine = serde_json::from_str(&line)
                    .with_context(|| format!("{}: line {}", embeddings.display(), i + 1))?;
                entries.push((row.id, row.vector));
            }
            save_index(&build_index(entries)?, &out)?;
        }

        Command::Retrieve {
            index,
            posts,
            model,
            k,
            out,
            run,
        } => {
            let model = model.unwrap_or_else(|| {
                index
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let (s, encoder) = load_model(&model)?;
            let k = check_k(k.unwrap_or(s.k))?;
            let idx = load_index(&index)?;
            let queries: Vec<(u64, String)> = load_posts(&posts)?
                .iter()
                .map(|p| (p.id, select_text(p, &s.view).text))
                .collect();
            let lists = retrieve(&encoder, &idx, &queries, k)?;
            write_predictions(&lists, k, &out)?;
            if let Some(run) = run {
                save_run(&run_file("retrieve", lists), &run)?;
            }
        }

        Command::Ensemble {
            runs,
            method,
            k_out,
            min_max,
            out,
            fused_run,
        } => {
            let mut s = settings(global, None)?;
            if let Some(m) = method {
                s.fusion.method = m
                    .parse()
                    .map_err(|e: claimrank::Error| UsageError(e.to_string()))?;
            }
            if let Some(k) = k_out {
                s.fusion.k_out = check_k(k)?;
            }
            s.fusion.min_max |= min_max;
            let runs = runs
                .iter()
                .map(|p| load_run(p).with_context(|| format!("loading run {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let fused = fuse(&runs, &s.fusion)?;
            write_predictions(&fused, s.fusion.k_out, &out)?;
            if let Some(path) = fused_run {
                save_run(&run_file("fused", fused), &path)?;
            }
        }

        Command::Evaluate {
            pred,
            gold,
            k,
            report,
        } => {
            let s = settings(global, None)?;
            let k = check_k(k.unwrap_or(s.k))?;
            let predictions = read_predictions(&pred)?;
            let gold = GoldMapping::load(&gold)?;
            let r = evaluate(&predictions, &gold, k)?;
            println!("S@{k} = {}", r.s_at_k_avg);
            print!("{r}");
            if let Some(path) = report {
                std::fs::write(&path, r.to_json() + "\n")?;
            }
        }

        Command::SplitFolds { data, k, out } => {
            let s = settings(global, None)?;
            let k = k.unwrap_or(s.train.folds);
            let corpus = load_corpus(&data)?;
            let pairs = training_pairs(&corpus, &s.view, s.train.drop_noisy);
            let folds = kfold_split(pairs.len(), k, s.train.seed)?;
            let mut text = String::from("post_id,fact_check_id,fold\n");
            for (p, f) in pairs.iter().zip(&folds.fold_of) {
                writeln!(text, "{},{},{f}", p.post_id, p.fact_check_id).unwrap();
            }
            std::fs::write(&out, text)?;
            println!("{:?}", folds.sizes());
        }

        Command::Pipeline {
            data,
            out,
            k,
            negative_fraction,
            flags,
        } => {
            let s = settings(global, Some(&flags))?;
            let corpus: Corpus = load_corpus(&data)?;
            run_pipeline_command(&corpus, &data, &out, s, k, negative_fraction, flags.fold)?;
        }
    }
    Ok(())
}

fn run_pipeline_command(
    corpus: &Corpus,
    data: &Path,
    out: &Path,
    mut s: Settings,
    k: Option<usize>,
    negative_fraction: Option<f64>,
    fold: Option<usize>,
) -> Result<()> {
    if let Some(k) = k {
        s.k = check_k(k)?;
    }
    if let Some(f) = negative_fraction {
        s.negative_fraction = f;
    }
    create_dir(out)?;
    let mut manifest = RunManifest::new("pipeline", s.train.seed, s.to_table());
    corpus_inputs(&mut manifest, data)?;
    for f in [
        CHECKPOINT_FILE,
        VOCAB_FILE,
        MODEL_CONFIG_FILE,
        TRAIN_LOG_FILE,
        INDEX_FILE,
        PREDICTIONS_FILE,
        RUN_FILE,
        REPORT_FILE,
        REPORT_JSON_FILE,
    ] {
        manifest.artifact(out.join(f));
    }
    manifest.write(&out.join(MANIFEST_FILE))?;

    let config = PipelineConfig {
        train: s.train.clone(),
        view: s.view,
        k: s.k,
        negative_fraction: s.negative_fraction,
        fold,
    };
    let result = run_pipeline(corpus, &config)?;
    save_model(&result.train.encoder, &s, out)?;
    std::fs::write(out.join(TRAIN_LOG_FILE), result.train.log.to_string())?;
    save_index(&result.index, &out.join(INDEX_FILE))?;
    write_predictions(&result.predictions, s.k, &out.join(PREDICTIONS_FILE))?;
    save_run(
        &run_file("pipeline", result.predictions),
        &out.join(RUN_FILE),
    )?;
    std::fs::write(out.join(REPORT_FILE), result.report.to_string())?;
    std::fs::write(out.join(REPORT_JSON_FILE), result.report.to_json() + "\n")?;
    println!("S@{} = {}", s.k, result.report.s_at_k_avg);
    print!("{}", result.report);
    Ok(())
}
