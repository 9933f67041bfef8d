//! One function per subcommand. Every command is deterministic given its
//! resolved options (seeds included), so reruns produce byte-identical
//! outputs.

use std::path::{Path, PathBuf};

use scalq::allocator::{backward_greedy, grid_search, random_search, CostOracle};
use scalq::bitstream::{
    allocation_of, apply_delta, cost_model_bits, deserialize, fingerprint, header_bytes,
    make_delta, on_disk_bits, read_delta, serialize, stream_to_bytes, truncate, write_delta,
};
use scalq::data::{load_idx, synthesize_images, write_idx};
use scalq::finetune::{fine_tune_with_validation, model_from_stacks, FineTuneConfig};
use scalq::hquant::{compression_rate, initial_allocation, quantize_model, whole_model_ratio};
use scalq::model_io::{load_model, model_info, save_model};
use scalq::nn::{accuracy, cross_entropy, forward, train_toy};
use scalq::{Dataset, Error, NetworkModel, Result, StageStack, STORED_BITS};

use crate::config::{budget_note, format_kb, parse_budget};

fn fmt_alloc(bits: &[u16]) -> String {
    bits.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

fn parse_alloc(text: &str) -> Result<Vec<u16>> {
    text.split([',', '-'])
        .map(|part| {
            part.trim().parse::<u16>().map_err(|_| {
                Error::InvalidConfig(format!("allocation `{text}`: bad entry `{part}`"))
            })
        })
        .collect()
}

fn load_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    load_idx(images, labels)
}

/// Per-layer rate lines plus the cost-model/on-disk totals.
fn print_stream_report(stacks: &[StageStack]) {
    for stack in stacks {
        let rate = compression_rate(stack.weight_count as u64, stack.depth(), STORED_BITS);
        println!(
            "layer {} ({}, N={}, n={}): rate {:.4} ({}/{}), conventional {:.4}, index bits {}, centroid bits {}",
            stack.layer_index,
            stack.kind_tag,
            stack.weight_count,
            stack.depth(),
            rate.ratio_f64(),
            rate.ratio.numer(),
            rate.ratio.denom(),
            rate.conventional_ratio,
            rate.index_bits,
            rate.centroid_bits,
        );
    }
    let b = cost_model_bits(stacks);
    let disk = on_disk_bits(stacks);
    println!(
        "cost-model bits B = {} ({}); on-disk {} bits = {} bytes ({}) incl. {} header bytes",
        b,
        format_kb(b),
        disk,
        disk / 8,
        format_kb(disk),
        header_bytes(stacks),
    );
}

pub fn cmd_quantize(model_path: &Path, conv_bits: u16, fc_bits: u16, out: &Path) -> Result<()> {
    let model = load_model::<f64>(model_path)?;
    let alloc = initial_allocation(&model, conv_bits, fc_bits);
    let stacks = quantize_model(&model, &alloc)?;
    let bytes = serialize(&stacks, out)?;
    println!(
        "quantized {} with CONV={conv_bits}, FC={fc_bits} bits",
        model_path.display()
    );
    println!("initial allocation: {}", fmt_alloc(&alloc));
    print_stream_report(&stacks);
    println!("E (bits of the initial network) = {}", cost_model_bits(&stacks));
    println!("wrote {} ({bytes} bytes)", out.display());
    Ok(())
}

pub struct AllocateOptions {
    pub strategy: String,
    pub budget: String,
    pub val_count: usize,
    pub random_count: usize,
    pub seed: u64,
    pub grid_cap: u128,
}

pub fn cmd_allocate(
    model_path: &Path,
    stream_path: &Path,
    images: &Path,
    labels: &Path,
    opts: &AllocateOptions,
    out: &Path,
    csv: &Path,
) -> Result<()> {
    let model = load_model::<f64>(model_path)?;
    let stacks = deserialize::<f64>(stream_path)?;
    let dataset = load_dataset(images, labels)?;
    let validation = dataset.take_prefix(opts.val_count);
    let budget_bits = parse_budget(&opts.budget)?;

    // The search constraint is the cost model B <= mu. Headers and plane
    // padding also land on disk, so the searched budget reserves room for
    // them (bounded at the initial allocation; truncation only shrinks it).
    let padding_bits: u64 = stacks
        .iter()
        .map(|s| s.depth() as u64 * (8 * s.weight_count.div_ceil(8) as u64 - s.weight_count as u64))
        .sum();
    let reserve = 8 * header_bytes(&stacks) + padding_bits;
    let effective_budget = budget_bits.saturating_sub(reserve);

    let max_bits = allocation_of(&stacks);
    let oracle = CostOracle::new(stacks.clone(), model.clone(), &validation)?;
    let trace = match opts.strategy.as_str() {
        "greedy" => backward_greedy(&oracle, effective_budget)?,
        "grid" => grid_search(&oracle, effective_budget, &max_bits, opts.grid_cap)?,
        "random" => random_search(
            &oracle,
            effective_budget,
            &max_bits,
            opts.random_count,
            opts.seed,
        )?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown strategy `{other}` (greedy, grid, or random)"
            )))
        }
    };

    let chosen = truncate(&stacks, &trace.chosen.allocation)?;
    let out_bytes = serialize(&chosen, out)?;
    trace.write_csv(csv)?;

    let original_bits = model.parameter_payload_bytes() * 8;
    let disk_bits = on_disk_bits(&chosen);
    println!(
        "budget {} = {} bits ({}); search budget after {}-bit header/padding reserve: {} bits",
        opts.budget.trim(),
        budget_bits,
        budget_note(),
        reserve,
        effective_budget
    );
    println!("strategy: {}", trace.strategy.name());
    println!(
        "chosen allocation: {} (B = {} bits, f = {})",
        fmt_alloc(&trace.chosen.allocation),
        trace.chosen.cost_bits,
        trace.chosen.f_value
    );
    println!(
        "oracle evaluations: {}{}",
        trace.total_evaluations,
        if trace.initial.is_some() {
            " (+1 for the starting point)"
        } else {
            ""
        }
    );
    println!(
        "rate vs budget: {:.4}; achieved rate (original bits / on-disk bits): {:.4}",
        whole_model_ratio(original_bits, budget_bits),
        whole_model_ratio(original_bits, disk_bits),
    );
    println!(
        "wrote {} ({out_bytes} bytes, {} on-disk bits) and {}",
        out.display(),
        disk_bits,
        csv.display()
    );
    Ok(())
}

pub fn cmd_truncate(stream_path: &Path, bits: &str, out: &Path) -> Result<()> {
    let stacks = deserialize::<f64>(stream_path)?;
    let alloc = parse_alloc(bits)?;
    let cut = truncate(&stacks, &alloc)?;
    let bytes = serialize(&cut, out)?;
    println!(
        "truncated {} to {} -> {} ({bytes} bytes)",
        stream_path.display(),
        fmt_alloc(&alloc),
        out.display()
    );
    print_stream_report(&cut);
    Ok(())
}

pub fn cmd_delta(base_path: &Path, target_path: &Path, out: &Path) -> Result<()> {
    let base = deserialize::<f64>(base_path)?;
    let target = deserialize::<f64>(target_path)?;
    let delta = make_delta(&base, &target)?;
    let bytes = write_delta(&delta, out)?;

    let target_stages: u64 = target.iter().map(|s| s.depth() as u64).sum();
    let centroid_bound = 2 * STORED_BITS as u64 * target_stages;
    let min_plane: u64 = target
        .iter()
        .map(|s| s.weight_count as u64)
        .min()
        .unwrap_or(0);
    println!(
        "delta {} -> {}: {bytes} bytes, {} added stages, {} centroid-update bits (bound 2*{}*{} = {} bits)",
        base_path.display(),
        target_path.display(),
        delta.added_stage_count(),
        delta.centroid_update_bits(),
        STORED_BITS,
        target_stages,
        centroid_bound,
    );
    println!(
        "smallest per-layer plane refresh would cost min(N_i) = {min_plane} bits; full target stream is {} bytes",
        stream_to_bytes(&target)?.len()
    );
    println!(
        "fingerprints: base {:#018x} -> target {:#018x}",
        delta.base_fingerprint, delta.target_fingerprint
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_apply_delta(stream_path: &Path, delta_path: &Path, out: &Path) -> Result<()> {
    let base = deserialize::<f64>(stream_path)?;
    let delta = read_delta::<f64>(delta_path)?;
    let upgraded = apply_delta(&base, &delta)?;
    let bytes = serialize(&upgraded, out)?;
    println!(
        "applied {} to {}: allocation {} -> {}",
        delta_path.display(),
        stream_path.display(),
        fmt_alloc(&allocation_of(&base)),
        fmt_alloc(&allocation_of(&upgraded))
    );
    println!("wrote {} ({bytes} bytes)", out.display());
    Ok(())
}

pub struct FinetuneOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_finetune(
    model_path: &Path,
    stream_path: &Path,
    images: &Path,
    labels: &Path,
    val_images: Option<&Path>,
    val_labels: Option<&Path>,
    opts: &FinetuneOptions,
    out: &Path,
    csv: &Path,
) -> Result<()> {
    let model = load_model::<f64>(model_path)?;
    let stacks = deserialize::<f64>(stream_path)?;
    let train = load_dataset(images, labels)?;
    let val = match (val_images, val_labels) {
        (Some(i), Some(l)) => Some(load_dataset(i, l)?),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidConfig(
                "val-images and val-labels must be given together".into(),
            ))
        }
    };

    let config = FineTuneConfig::new(opts.learning_rate, opts.epochs, opts.batch_size, opts.seed);
    // Reports fall back to the training split when no validation split is given.
    let val_ref = val.as_ref().unwrap_or(&train);
    let report = fine_tune_with_validation(&stacks, &model, &train, Some(val_ref), &config)?;

    let mut csv_text = String::from("epoch,train_loss,val_loss\n");
    for (epoch, (t, v)) in report
        .epoch_losses
        .iter()
        .zip(&report.val_losses)
        .enumerate()
    {
        csv_text.push_str(&format!("{epoch},{t},{v}\n"));
    }
    std::fs::write(csv, csv_text)?;

    let bytes = serialize(&report.stacks, out)?;
    println!(
        "fine-tuned {} for {} epochs (lr {}, batch {}, seed {})",
        stream_path.display(),
        report.epoch_losses.len(),
        opts.learning_rate,
        opts.batch_size,
        opts.seed
    );
    if let (Some(first), Some(last)) = (report.epoch_losses.first(), report.epoch_losses.last()) {
        println!("train loss: {first} -> {last}");
    }
    println!("wrote {} ({bytes} bytes) and {}", out.display(), csv.display());
    if let Some(epoch) = report.diverged_at {
        return Err(Error::NonFiniteLoss { epoch });
    }
    Ok(())
}

pub fn cmd_eval(
    model_path: &Path,
    stream_path: &Path,
    images: &Path,
    labels: &Path,
) -> Result<()> {
    let model = load_model::<f64>(model_path)?;
    let stacks = deserialize::<f64>(stream_path)?;
    let dataset = load_dataset(images, labels)?;
    let compressed = model_from_stacks(&stacks, &model)?;
    let logits = forward(&compressed, dataset.inputs())?;
    let f = cross_entropy(&logits, dataset.labels())?;
    let top1 = accuracy(&logits, dataset.labels())?;
    let disk = std::fs::metadata(stream_path)?.len();
    println!("allocation: {}", fmt_alloc(&allocation_of(&stacks)));
    println!("f (cross-entropy) = {f}");
    println!("top-1 accuracy = {top1}");
    println!("B (cost-model bits) = {}", cost_model_bits(&stacks));
    println!("on-disk: {disk} bytes ({})", format_kb(disk * 8));
    Ok(())
}

pub fn cmd_info(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..4) {
        Some(m) if m == scalq::model_io::MODEL_MAGIC => {
            let model = load_model::<f64>(path)?;
            let info = model_info(&model, bytes.len() as u64);
            println!("model {} ({} bytes)", path.display(), info.file_bytes);
            println!("input shape: {:?}", info.input_shape);
            for (i, (kind, tag, weights, biases)) in info.layers.iter().enumerate() {
                let tag = tag.map_or("-".to_string(), |t| t.to_string());
                println!("layer {i}: {kind} [{tag}] weights {weights} biases {biases}");
            }
            println!(
                "weight payload: {} bytes = {} ({})",
                info.payload_bytes,
                format_kb(info.payload_bytes * 8),
                budget_note()
            );
        }
        Some(m) if m == scalq::bitstream::STREAM_MAGIC => {
            let stacks = deserialize::<f64>(path)?;
            println!(
                "stream {} ({} bytes): L = {} layers, allocation {}",
                path.display(),
                bytes.len(),
                stacks.len(),
                fmt_alloc(&allocation_of(&stacks))
            );
            println!("fingerprint: {:#018x}", fingerprint(&bytes));
            print_stream_report(&stacks);
        }
        Some(m) if m == scalq::bitstream::DELTA_MAGIC => {
            let delta = read_delta::<f64>(path)?;
            println!("delta {} ({} bytes)", path.display(), bytes.len());
            println!(
                "fingerprints: base {:#018x} -> target {:#018x}",
                delta.base_fingerprint, delta.target_fingerprint
            );
            for layer in &delta.layers {
                println!(
                    "layer {}: +{} stages, {} centroid updates",
                    layer.layer_index,
                    layer.added.len(),
                    layer.centroid_updates.len()
                );
            }
        }
        _ => {
            return Err(Error::BadMagic {
                expected: "model (SQNM), stream (SQBS), or delta (SQDL)",
                context: path.display().to_string(),
            })
        }
    }
    Ok(())
}

pub struct GenToyOptions {
    pub arch: String,
    pub classes: usize,
    pub rows: usize,
    pub cols: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

pub struct GenToyPaths {
    pub model: PathBuf,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
}

/// Produce a small pre-trained model plus IDX train/validation splits, all
/// deterministic from the seed.
pub fn cmd_gen_toy(opts: &GenToyOptions, paths: &GenToyPaths) -> Result<()> {
    let train = synthesize_images::<f64>(
        opts.seed,
        opts.train_samples,
        opts.rows,
        opts.cols,
        opts.classes,
    )?;
    let val = synthesize_images::<f64>(
        opts.seed.wrapping_add(1),
        opts.val_samples,
        opts.rows,
        opts.cols,
        opts.classes,
    )?;

    let fresh: NetworkModel = match opts.arch.as_str() {
        "lenet" => {
            if opts.rows != 8 || opts.cols != 8 {
                return Err(Error::InvalidConfig(
                    "arch `lenet` is built for 8x8 images; use --rows 8 --cols 8 or arch `mlp`"
                        .into(),
                ));
            }
            scalq::toy::lenet_shaped(opts.classes, opts.seed)
        }
        "mlp" => scalq::toy::mlp_on_images(opts.rows, opts.cols, &[16], opts.classes, opts.seed),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown arch `{other}` (lenet or mlp)"
            )))
        }
    };
    let (trained, _) = train_toy(&fresh, &train, opts.epochs, opts.learning_rate, opts.seed)?;
    let trained = trained.snapped_to_stored();

    save_model(&trained, &paths.model)?;
    write_idx(&train, &paths.images, &paths.labels)?;
    write_idx(&val, &paths.val_images, &paths.val_labels)?;

    let train_logits = forward(&trained, train.inputs())?;
    let val_logits = forward(&trained, val.inputs())?;
    println!(
        "generated {} ({} arch, seed {}): train acc {}, val acc {}",
        paths.model.display(),
        opts.arch,
        opts.seed,
        accuracy(&train_logits, train.labels())?,
        accuracy(&val_logits, val.labels())?
    );
    println!(
        "wrote {}, {}, {}, {}",
        paths.images.display(),
        paths.labels.display(),
        paths.val_images.display(),
        paths.val_labels.display()
    );
    Ok(())
}

