use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use densenmt::bleu::bleu_lines;
use densenmt::checkpoint::Checkpoint;
use densenmt::data::{encode_pairs, pair_lines, read_lines, BpeModel, Vocabulary};
use densenmt::model::{
    attention_window_widths, build_model, count_parameters, decoder_plan, encoder_plan, LayerKind, ModelConfig,
    StackPlan,
};
use densenmt::runconfig::RunConfig;
use densenmt::search::{translate_ids, BeamConfig};
use densenmt::train::{fit_with, FitOutcome, OptimizerState, TrainingCurve};
use densenmt::{Error, Result};

use crate::artifacts::{io, read, segment, write, Artifacts};

pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const CURVE_CSV: &str = "curve.csv";

fn learn_bpe(lines: &[&[String]], merges: usize) -> Result<BpeModel> {
    BpeModel::learn(
        lines.iter().flat_map(|ls| ls.iter()).flat_map(|l| l.split_whitespace()),
        merges,
    )
}

fn segment_lines(bpe: &Option<BpeModel>, lines: &[String]) -> Vec<String> {
    lines.iter().map(|l| segment(bpe, l).join(" ")).collect()
}

/// Derived vocabulary size, capped by a nonzero configured size.
fn build_vocab<'a>(tokens: impl Iterator<Item = &'a str>, configured: usize) -> Vocabulary {
    Vocabulary::build(tokens, (configured > 0).then_some(configured))
}

pub fn train(config: &Path, resume: bool) -> Result<()> {
    let run = RunConfig::load(config)?;
    run.train.validate()?;
    let [train_src, train_tgt, dev_src, dev_tgt] = run.training_paths()?;
    let (train_src, train_tgt) = (read_lines(train_src)?, read_lines(train_tgt)?);
    let (dev_src, dev_tgt) = (read_lines(dev_src)?, read_lines(dev_tgt)?);

    let (src_bpe, tgt_bpe) = match run.data.bpe_merges {
        None => (None, None),
        Some(k) if run.data.joint_bpe => {
            let m = learn_bpe(&[&train_src, &train_tgt], k)?;
            (Some(m.clone()), Some(m))
        }
        Some(k) => (Some(learn_bpe(&[&train_src], k)?), Some(learn_bpe(&[&train_tgt], k)?)),
    };
    let mut model_cfg = run.model.clone();
    // room for EOS on the source and BOS on the target
    let position_cap = model_cfg.max_positions.saturating_sub(1);
    let max_len = Some(run.data.filter_max_len.map_or(position_cap, |l| l.min(position_cap)));
    let filter = |s: &[String], t: &[String]| {
        pair_lines(
            &segment_lines(&src_bpe, s),
            &segment_lines(&tgt_bpe, t),
            run.data.max_ratio,
            max_len,
        )
    };
    let train_pairs = filter(&train_src, &train_tgt)?;
    let dev_pairs = filter(&dev_src, &dev_tgt)?;
    if train_pairs.is_empty() || dev_pairs.is_empty() {
        return Err(Error::Data("no sentence pairs left after length filtering".into()));
    }
    let src_vocab = build_vocab(
        train_pairs.iter().flat_map(|p| &p.src).map(String::as_str),
        model_cfg.src_vocab_size,
    );
    let tgt_vocab = build_vocab(
        train_pairs.iter().flat_map(|p| &p.tgt).map(String::as_str),
        model_cfg.tgt_vocab_size,
    );
    model_cfg.src_vocab_size = src_vocab.len();
    model_cfg.tgt_vocab_size = tgt_vocab.len();
    model_cfg.validate()?;
    let train_data = encode_pairs(&train_pairs, &src_vocab, &tgt_vocab);
    let dev_data = encode_pairs(&dev_pairs, &src_vocab, &tgt_vocab);

    let out = &run.data.out_dir;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let artifacts = Artifacts {
        src_vocab,
        tgt_vocab,
        src_bpe,
        tgt_bpe,
    };
    let last_path = out.join(LAST_CKPT);
    let (mut params, mut state, mut curve) = if resume {
        let ck = Checkpoint::load(&last_path)?;
        if ck.model_cfg != model_cfg {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different model configuration",
                last_path.display()
            )));
        }
        let mut state = ck.optimizer;
        state.momentum = run.train.momentum;
        (ck.params, state, ck.curve)
    } else {
        let params = build_model(&model_cfg, run.train.seed)?;
        let state = OptimizerState::new(&params, &run.train);
        (params, state, TrainingCurve::new())
    };
    artifacts.save(out)?;
    eprintln!(
        "training on {} pairs ({} dev), {} parameters",
        train_data.len(),
        dev_data.len(),
        params.total_elements()
    );
    let curve_path = out.join(CURVE_CSV);
    write(&curve_path, &curve.to_csv())?;
    let outcome = fit_with(
        &mut params,
        &model_cfg,
        &run.train,
        &train_data,
        &dev_data,
        &mut state,
        &mut curve,
        |params, state, curve| {
            let r = *curve.last().expect("epoch recorded");
            eprintln!(
                "epoch {} train_loss {:.4} val_loss {:.4} lr {}",
                r.epoch, r.train_loss, r.val_loss, r.lr
            );
            let ck = Checkpoint {
                model_cfg: model_cfg.clone(),
                train_cfg: run.train.clone(),
                epoch: r.epoch as u32,
                params: params.clone(),
                optimizer: state.clone(),
                curve: curve.clone(),
            };
            ck.save(&last_path)?;
            let best = curve.records().iter().map(|x| x.val_loss).fold(f64::INFINITY, f64::min);
            if r.val_loss <= best {
                ck.save(&out.join(BEST_CKPT))?;
            }
            write(&curve_path, &curve.to_csv())
        },
    )?;
    match outcome {
        FitOutcome::Stopped => eprintln!("stopped: learning rate below {}", run.train.min_lr),
        FitOutcome::EpochLimit => eprintln!("reached max_epochs = {}", run.train.max_epochs),
    }
    Ok(())
}

fn checkpoint_dir(ckpt: &Path) -> &Path {
    ckpt.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
}

fn translate_lines(ckpt: &Path, lines: &[String], beam: &BeamConfig) -> Result<Vec<String>> {
    beam.validate()?;
    let ck = Checkpoint::load(ckpt)?;
    let art = Artifacts::load(checkpoint_dir(ckpt))?;
    if art.src_vocab.len() != ck.model_cfg.src_vocab_size || art.tgt_vocab.len() != ck.model_cfg.tgt_vocab_size {
        return Err(Error::Checkpoint("vocabulary files do not match the checkpoint".into()));
    }
    lines
        .iter()
        .map(|line| {
            let src = art.encode_source_line(line, ck.model_cfg.max_positions);
            let ids = translate_ids(&ck.params, &ck.model_cfg, &src, beam)?;
            art.decode_target(&ids)
        })
        .collect()
}

fn print_lines(lines: &[String]) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    for l in lines {
        writeln!(out, "{l}").map_err(|e| io(Path::new("<stdout>"), e))?;
    }
    out.flush().map_err(|e| io(Path::new("<stdout>"), e))
}

pub fn translate(ckpt: &Path, input: &Path, beam: &BeamConfig) -> Result<()> {
    let lines = read_lines(input)?;
    print_lines(&translate_lines(ckpt, &lines, beam)?)
}

pub struct ScoreOptions<'a> {
    pub beam: BeamConfig,
    pub smooth: bool,
    pub key_values: bool,
    pub hyp_out: Option<&'a Path>,
}

pub fn score(ckpt: &Path, src: &Path, refs: &Path, opts: &ScoreOptions<'_>) -> Result<()> {
    let (src, refs) = (read_lines(src)?, read_lines(refs)?);
    if src.len() != refs.len() {
        return Err(Error::Data(format!(
            "line count mismatch: source has {}, reference has {}",
            src.len(),
            refs.len()
        )));
    }
    let hyps = translate_lines(ckpt, &src, &opts.beam)?;
    if let Some(path) = opts.hyp_out {
        let mut text = hyps.join("\n");
        if !hyps.is_empty() {
            text.push('\n');
        }
        write(path, &text)?;
    }
    let report = bleu_lines(&hyps, &refs, opts.smooth)?;
    if opts.key_values {
        print!("{}", report.to_key_values());
    } else {
        println!("{report}");
    }
    Ok(())
}

fn describe_stack(out: &mut String, side: &str, plan: &StackPlan) {
    for layer in &plan.layers {
        let label = match layer.kind {
            LayerKind::Embedding => format!("{side}.embed"),
            LayerKind::Conv { ordinal } => format!("{side}.layer{ordinal} conv"),
            LayerKind::Summary { ordinal } => format!("{side}.summary{ordinal}"),
        };
        let _ = writeln!(out, "  {label} in={} out={}", layer.input_width, layer.output_width);
    }
}

pub fn describe(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    let enc = encoder_plan(cfg);
    let dec = decoder_plan(cfg);
    let _ = writeln!(
        s,
        "model {} {} enc_layers={} dec_layers={} embed_dim={} hidden_dim={} kernel={} sumlen={}",
        cfg.connection_mode,
        cfg.attention_mode,
        cfg.enc_layers,
        cfg.dec_layers,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.kernel_size(),
        cfg.sumlen.map_or_else(|| "none".into(), |v| v.to_string()),
    );
    let _ = writeln!(s, "encoder");
    describe_stack(&mut s, "enc", &enc);
    let _ = writeln!(s, "decoder");
    describe_stack(&mut s, "dec", &dec);
    let _ = writeln!(s, "decoder head input width {}", dec.head_input_width);
    let window = enc.attention_window();
    let widths: Vec<String> = attention_window_widths(cfg).iter().map(ToString::to_string).collect();
    let _ = writeln!(
        s,
        "attention window encoder layers {}..={} widths [{}] plus embedding width {}",
        window.start,
        window.end - 1,
        widths.join(", "),
        cfg.embed_dim
    );
    let count = count_parameters(cfg);
    let _ = writeln!(s, "parameters");
    for (name, n) in &count.modules {
        let _ = writeln!(s, "  {name} {n}");
    }
    let _ = writeln!(s, "  total {}", count.total);
    s
}

fn inspect_config(path: &Path) -> Result<ModelConfig> {
    let run = RunConfig::load(path)?;
    for (key, size) in [
        ("src_vocab_size", run.model.src_vocab_size),
        ("tgt_vocab_size", run.model.tgt_vocab_size),
    ] {
        if size == 0 {
            return Err(Error::config(key, "must be set explicitly for inspect"));
        }
    }
    run.model.validate()?;
    Ok(run.model)
}

pub fn inspect(config: &Path, compare: Option<&Path>) -> Result<()> {
    let cfg = inspect_config(config)?;
    print!("{}", describe(&cfg));
    if let Some(other) = compare {
        let other_cfg = inspect_config(other)?;
        let (a, b) = (count_parameters(&cfg).total, count_parameters(&other_cfg).total);
        println!("compare {} total {a}", config.display());
        println!("compare {} total {b}", other.display());
        println!("ratio {:.6}", a as f64 / b as f64);
    }
    Ok(())
}

pub fn bpe_learn(files: &[PathBuf], merges: usize, joint: bool, output: &Path) -> Result<()> {
    if files.len() > 1 && !joint {
        return Err(Error::Data("several input files need --joint".into()));
    }
    let mut lines = Vec::new();
    for f in files {
        lines.extend(read_lines(f)?);
    }
    let model = learn_bpe(&[&lines], merges)?;
    write(output, &model.to_file_string())
}

fn input_lines(path: &Path) -> Result<Vec<String>> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut text).map_err(|e| io(path, e))?;
        Ok(text.lines().map(String::from).collect())
    } else {
        read_lines(path)
    }
}

pub fn bpe_apply(model: &Path, input: &Path) -> Result<()> {
    let bpe = Some(BpeModel::parse(&read(model)?)?);
    print_lines(&segment_lines(&bpe, &input_lines(input)?))
}

pub fn bpe_decode(input: &Path) -> Result<()> {
    let lines: Vec<String> = input_lines(input)?
        .iter()
        .map(|l| densenmt::data::bpe_decode_line(&l.split_whitespace().collect::<Vec<_>>()))
        .collect();
    print_lines(&lines)
}

/// Two curves side by side over the union of their epochs.
pub fn merge_curves(a: &TrainingCurve, b: &TrainingCurve, labels: (&str, &str)) -> String {
    let (la, lb) = labels;
    let mut s = format!("epoch,train_loss_{la},val_loss_{la},train_loss_{lb},val_loss_{lb}\n");
    let mut epochs: Vec<usize> = a.records().iter().chain(b.records()).map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let cell = |c: &TrainingCurve, e: usize| {
        c.records()
            .iter()
            .find(|r| r.epoch == e)
            .map_or_else(|| ",".to_string(), |r| format!("{},{}", r.train_loss, r.val_loss))
    };
    for e in epochs {
        let _ = writeln!(s, "{e},{},{}", cell(a, e), cell(b, e));
    }
    s
}

pub fn compare_curves(a: &Path, b: &Path, labels: (&str, &str)) -> Result<()> {
    let ca = TrainingCurve::parse_csv(&read(a)?)?;
    let cb = TrainingCurve::parse_csv(&read(b)?)?;
    print!("{}", merge_curves(&ca, &cb, labels));
    Ok(())
}
