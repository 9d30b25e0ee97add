use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use fishcore::bench::bench_generate;
use fishcore::bitstream::{load_model, pack_codes, payload_bits, save_model, unpack_codes};
use fishcore::dualar::{generate, DualArConfig, DualArWeights, SamplerSpec};
use fishcore::firefly::{f_down_reference, f_up_reference, CodecArch, CodecModel};
use fishcore::gfsq::{codebook_size, entropy_bits, gfsq_decode, gfsq_encode, histograms, utilization};
use fishcore::train::{synth_dataset, train_codec, SynthSpec, TrainConfig};
use fishcore::{FrameTensor, GfsqConfig};
use serde_json::{json, Value};

use crate::failure::{CmdResult, ExitCode, EXIT_MODEL};
use crate::io::{read_bytes, read_json, read_tensor, sidecar, write_bytes, write_json, write_tensor};
use crate::{Cli, Command, GlobalOpts};

/// Quantizer used when none is given: two groups of a 3×3 grid, hop 8.
fn default_quantizer() -> GfsqConfig {
    GfsqConfig::new(2, vec![3, 3], 8).expect("valid default quantizer")
}

pub fn run(cli: &Cli) -> CmdResult<Value> {
    let g = &cli.global;
    match &cli.command {
        Command::SynthData {
            out,
            signals,
            length,
            tones,
        } => synth_data(g, out, *signals, *length, *tones),
        Command::Train {
            data,
            out,
            quantizer,
            hidden,
            curve,
        } => train(g, data, out, quantizer.as_deref(), *hidden, curve.as_deref()),
        Command::Encode { input, out, codec } => encode(g, input, out, codec.as_deref()),
        Command::Decode { input, out, codec } => decode(input, out, codec.as_deref()),
        Command::InitModel {
            out,
            quantizer,
            eos_bias,
        } => init_model(g, out, quantizer.as_deref(), *eos_bias),
        Command::Generate {
            model,
            text,
            sampler,
            out,
            max_frames,
        } => cmd_generate(g, model, text, sampler.as_deref(), out, *max_frames),
        Command::Stats { input } => stats(input),
        Command::Bench {
            model,
            text,
            sampler,
            repeats,
            max_frames,
        } => bench(g, model, text, sampler.as_deref(), *repeats, *max_frames),
    }
}

fn quantizer_from(path: Option<&Path>) -> CmdResult<GfsqConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(default_quantizer()),
    }
}

fn synth_data(g: &GlobalOpts, out: &Path, signals: usize, length: usize, tones: usize) -> CmdResult<Value> {
    let mut spec = match &g.config {
        Some(p) => read_json(p)?,
        None => SynthSpec {
            num_signals: signals,
            length,
            num_tones: tones,
            seed: 0,
        },
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let data = FrameTensor::concat_batch(&synth_dataset(&spec)?)?;
    write_tensor(out, &data)?;
    Ok(json!({ "path": out, "shape": data.shape(), "spec": spec }))
}

fn load_codec(path: &Path) -> CmdResult<CodecModel> {
    let arch: CodecArch = read_json(&sidecar(path))?;
    let weights = load_model(&read_bytes(path)?).exit_code(EXIT_MODEL)?;
    CodecModel::from_weights(arch, &weights).exit_code(EXIT_MODEL)
}

fn train(
    g: &GlobalOpts,
    data: &Path,
    out: &Path,
    quantizer: Option<&Path>,
    hidden: usize,
    curve: Option<&Path>,
) -> CmdResult<Value> {
    let mut config = match &g.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::toy(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    let q = quantizer_from(quantizer)?;
    let tensor = read_tensor(data)?;
    let dataset: Vec<FrameTensor> = (0..tensor.batch()).map(|b| tensor.batch_item(b)).collect();
    let model = CodecModel::new(CodecArch::toy(q, hidden), config.seed)?;
    let started = Instant::now();
    let report = train_codec(&dataset, model, &config)?;
    write_bytes(out, &save_model(&report.model.to_weights()?)?)?;
    write_json(&sidecar(out), report.model.arch())?;
    if let Some(curve) = curve {
        write_bytes(curve, report.curve_csv().as_bytes())?;
    }
    Ok(json!({
        "steps": config.total_steps,
        "initial_mse": report.initial_mse,
        "final_mse": report.final_mse,
        "utilization": report.utilization,
        "parameters": report.model.parameter_count(),
        "seconds": started.elapsed().as_secs_f64(),
        "model": out,
    }))
}

fn encode(g: &GlobalOpts, input: &Path, out: &Path, codec: Option<&Path>) -> CmdResult<Value> {
    let x = read_tensor(input)?;
    let codes = match codec {
        Some(path) => load_codec(path)?.encode(&x)?,
        None => {
            let Some(config) = &g.config else {
                return Err(anyhow!("encode needs a quantizer via --config or a trained --codec").into());
            };
            let q: GfsqConfig = read_json(config)?;
            if x.channels() != q.latent_channels() {
                return Err(fishcore::Error::Shape(format!(
                    "input has {} channels, quantizer expects {}",
                    x.channels(),
                    q.latent_channels()
                ))
                .into());
            }
            gfsq_encode(&f_down_reference(&x, q.hop())?, &q)?
        }
    };
    let bytes = pack_codes(&codes, x.len())?;
    write_bytes(out, &bytes)?;
    let [b, c, l] = x.shape();
    let bits = payload_bits(&codes);
    Ok(json!({
        "frames": codes.frames(),
        "bytes": bytes.len(),
        "payload_bits": bits,
        "compression_ratio": (32 * b * c * l) as f64 / bits as f64,
    }))
}

fn decode(input: &Path, out: &Path, codec: Option<&Path>) -> CmdResult<Value> {
    let (codes, original_len) = unpack_codes(&read_bytes(input)?)?;
    let y = match codec {
        Some(path) => {
            let model = load_codec(path)?;
            if model.quantizer() != codes.config() {
                return Err(fishcore::Error::Shape("stream quantizer differs from the codec's".into()).into());
            }
            model.decode(&codes, original_len)?
        }
        None => f_up_reference(&gfsq_decode(&codes)?, codes.config().hop(), original_len)?,
    };
    write_tensor(out, &y)?;
    Ok(json!({ "path": out, "shape": y.shape() }))
}

fn init_model(g: &GlobalOpts, out: &Path, quantizer: Option<&Path>, eos_bias: f64) -> CmdResult<Value> {
    let config = match &g.config {
        Some(p) => read_json(p)?,
        None => DualArConfig::toy(&quantizer_from(quantizer)?),
    };
    let mut weights = DualArWeights::<f32>::random(config, g.seed.unwrap_or(0))?;
    weights.force_eos(eos_bias);
    write_bytes(out, &save_model(&weights.to_weights()?)?)?;
    write_json(&sidecar(out), &weights.config)?;
    Ok(json!({ "model": out, "config": weights.config, "tensors": weights.named_tensors().len() }))
}

fn load_generator(g: &GlobalOpts, path: &Path) -> CmdResult<DualArWeights<f32>> {
    let bytes = read_bytes(path)?;
    let config: DualArConfig = match &g.config {
        Some(p) => read_json(p)?,
        None => read_json(&sidecar(path))?,
    };
    let set = load_model(&bytes)
        .context("loading generator weights")
        .exit_code(EXIT_MODEL)?;
    DualArWeights::from_weights(config, &set)
        .context("loading generator weights")
        .exit_code(EXIT_MODEL)
}

fn sampler_from(g: &GlobalOpts, arg: Option<&str>) -> CmdResult<SamplerSpec> {
    let mut spec: SamplerSpec = match arg {
        None => SamplerSpec::greedy(),
        Some(s) if s.trim_start().starts_with('{') => serde_json::from_str(s).context("parsing sampler JSON")?,
        Some(path) => read_json(Path::new(path))?,
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_generate(
    g: &GlobalOpts,
    model: &Path,
    text: &[u32],
    sampler: Option<&str>,
    out: &Path,
    max_frames: usize,
) -> CmdResult<Value> {
    let weights = load_generator(g, model)?;
    let spec = sampler_from(g, sampler)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = BufWriter::new(file);
    let started = Instant::now();
    let mut stream = generate(&weights, text, spec, max_frames).exit_code(EXIT_MODEL)?;
    let mut stamps = Vec::new();
    let mut frames = 0usize;
    for frame in stream.by_ref() {
        let frame = frame.exit_code(EXIT_MODEL)?;
        let mut line = json!({ "frame": frames, "semantic": frame.semantic, "codes": frame.codes });
        if g.trace {
            let t_ms = started.elapsed().as_secs_f64() * 1e3;
            line["t_ms"] = json!(t_ms);
            stamps.push(t_ms);
        }
        writeln!(writer, "{line}").context("writing frame")?;
        writer.flush().context("writing frame")?;
        frames += 1;
    }
    let mut report = json!({ "frames": frames, "truncated": stream.truncated(), "out": out });
    if g.trace {
        report["timestamps_ms"] = json!(stamps);
        report["total_ms"] = json!(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(report)
}

fn stats(input: &Path) -> CmdResult<Value> {
    let (codes, original_len) = unpack_codes(&read_bytes(input)?)?;
    let hists = histograms(&codes)?;
    let util = utilization(&codes)?;
    let groups: Vec<Value> = hists
        .iter()
        .zip(&util)
        .enumerate()
        .map(|(g, (h, u))| {
            let used: Vec<u64> = h.iter().copied().filter(|&n| n > 0).collect();
            let mut top: Vec<(usize, u64)> = h.iter().copied().enumerate().filter(|&(_, n)| n > 0).collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            top.truncate(5);
            json!({
                "group": g,
                "utilization": u,
                "entropy_bits": entropy_bits(h),
                "used_indices": used.len(),
                "min_count": used.iter().min(),
                "max_count": used.iter().max(),
                "top": top,
            })
        })
        .collect();
    let [b, g, l] = codes.shape();
    Ok(json!({
        "batch": b,
        "groups": g,
        "frames": l,
        "original_len": original_len,
        "codebook_size": codebook_size(codes.config()),
        "utilization": util,
        "per_group": groups,
    }))
}

fn bench(
    g: &GlobalOpts,
    model: &Path,
    text: &[u32],
    sampler: Option<&str>,
    repeats: usize,
    max_frames: usize,
) -> CmdResult<Value> {
    let weights = load_generator(g, model)?;
    let spec = sampler_from(g, sampler)?;
    if repeats < 3 {
        return Err(anyhow!("bench needs at least 3 repeats").into());
    }
    let report = bench_generate(&weights, text, spec, max_frames, repeats).exit_code(EXIT_MODEL)?;
    Ok(serde_json::to_value(report).context("serializing report")?)
}
