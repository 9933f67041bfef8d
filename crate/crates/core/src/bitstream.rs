//! Scalable stream container ("SQBS") and incremental upgrade deltas ("SQDL").
//!
//! Stream layout, all integers little-endian:
//!
//! ```text
//! magic "SQBS" | u16 version | u16 layer count L
//! per layer:  u16 layer_index | u64 N | u16 n | u8 kind_tag
//!             | u8 rank | u32 extent per axis
//! payload, per layer in header order, per stage base-first:
//!             f32 c0 | f32 c1 | byte-padded bit-plane (ceil(N/8) bytes)
//! ```
//!
//! Stages are written base first, enhancements in ascending order, and every
//! stage's byte range is independent of `n`, so a layer can be cut to any
//! prefix of its stages without rewriting anything else (and without
//! re-quantizing).
//!
//! Two accounting numbers appear in reports: the cost-model bits
//! `B = Σ (N_i + 2b)·n_i` (no padding, no headers) and the actual on-disk
//! size. Plane padding to byte boundaries is counted in the on-disk number
//! only.
//!
//! A stage's `mse` is a quantization-time diagnostic and is not part of the
//! wire format; stages read back from a stream report zero there. The
//! `degenerate` flag is equivalent to "all-zero plane with equal centroids"
//! and is re-derived on read.
//!
//! Delta layout:
//!
//! ```text
//! magic "SQDL" | u16 version | u64 base fingerprint | u64 target fingerprint
//! | u16 layer count; per layer:
//!   u16 layer_index | u64 N | u16 added stage count | added stages (as above)
//!   | u16 centroid update count | per update: u16 stage index | f32 c0 | f32 c1
//! ```
//!
//! Fingerprints are 64-bit FNV-1a over a stream's full serialization —
//! deterministic mismatch detection, not a security feature.

use std::io::Write;
use std::path::Path;

use crate::bits::BitPlane;
use crate::error::{Error, Result};
use crate::hquant::{Stage, StageStack};
use crate::nn::KindTag;
use crate::scalar::Real;
use crate::STORED_BITS;

pub const STREAM_MAGIC: &[u8; 4] = b"SQBS";
pub const DELTA_MAGIC: &[u8; 4] = b"SQDL";
pub const STREAM_VERSION: u16 = 1;

/// 64-bit FNV-1a.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// Stream serialization

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile(self.context.to_string()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn write_stage<S: Real>(out: &mut Vec<u8>, stage: &Stage<S>) {
    out.extend_from_slice(&stage.centroids.0.to_stored().to_le_bytes());
    out.extend_from_slice(&stage.centroids.1.to_stored().to_le_bytes());
    out.extend_from_slice(stage.plane.as_bytes());
}

fn read_stage<S: Real>(cur: &mut Cursor<'_>, weight_count: usize) -> Result<Stage<S>> {
    let c0 = cur.f32()?;
    let c1 = cur.f32()?;
    let plane_bytes = cur.take(weight_count.div_ceil(8))?;
    let plane = BitPlane::from_bytes(plane_bytes.to_vec(), weight_count)
        .ok_or_else(|| Error::TruncatedFile("bit-plane with nonzero padding".to_string()))?;
    let degenerate = c0.to_bits() == c1.to_bits() && plane.count_ones() == 0;
    Ok(Stage {
        centroids: (S::from_stored(c0), S::from_stored(c1)),
        plane,
        mse: S::zero(),
        degenerate,
    })
}

/// Serialize stacks into stream bytes.
pub fn stream_to_bytes<S: Real>(stacks: &[StageStack<S>]) -> Result<Vec<u8>> {
    if stacks.is_empty() {
        return Err(Error::EmptyInput("stream serialization"));
    }
    let mut out = Vec::with_capacity(on_disk_bits(stacks) as usize / 8);
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(stacks.len() as u16).to_le_bytes());
    for stack in stacks {
        out.extend_from_slice(&(stack.layer_index as u16).to_le_bytes());
        out.extend_from_slice(&(stack.weight_count as u64).to_le_bytes());
        out.extend_from_slice(&stack.depth().to_le_bytes());
        out.push(stack.kind_tag.as_byte());
        out.push(stack.original_shape.len() as u8);
        for &d in &stack.original_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for stack in stacks {
        for stage in &stack.stages {
            write_stage(&mut out, stage);
        }
    }
    Ok(out)
}

pub fn stream_from_bytes<S: Real>(bytes: &[u8]) -> Result<Vec<StageStack<S>>> {
    if bytes.len() < 4 || &bytes[..4] != STREAM_MAGIC {
        return Err(Error::BadMagic {
            expected: "stream (SQBS)",
            context: "stream bytes".to_string(),
        });
    }
    let mut cur = Cursor {
        bytes,
        pos: 4,
        context: "stream",
    };
    let version = cur.u16()?;
    if version != STREAM_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "stream",
            version,
        });
    }
    let layer_count = cur.u16()? as usize;
    if layer_count == 0 {
        return Err(Error::EmptyInput("stream with zero layers"));
    }

    struct Record {
        layer_index: usize,
        weight_count: usize,
        depth: u16,
        kind_tag: KindTag,
        shape: Vec<usize>,
    }
    let mut records = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer_index = cur.u16()? as usize;
        let weight_count = cur.u64()? as usize;
        let depth = cur.u16()?;
        let tag = cur.take(1)?[0];
        let kind_tag = KindTag::from_byte(tag).ok_or_else(|| {
            Error::InvalidModel(format!("unknown kind_tag byte {tag} in stream header"))
        })?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        if depth < 1 {
            return Err(Error::InvalidAllocation(format!(
                "layer {layer_index} has zero stages"
            )));
        }
        let shape_len: usize = shape.iter().product();
        if shape_len != weight_count {
            return Err(Error::ShapeMismatch {
                layer: layer_index,
                detail: format!("shape {shape:?} does not hold {weight_count} weights"),
            });
        }
        records.push(Record {
            layer_index,
            weight_count,
            depth,
            kind_tag,
            shape,
        });
    }

    let mut stacks = Vec::with_capacity(layer_count);
    for rec in records {
        let mut stages = Vec::with_capacity(rec.depth as usize);
        for _ in 0..rec.depth {
            stages.push(read_stage(&mut cur, rec.weight_count)?);
        }
        stacks.push(StageStack {
            layer_index: rec.layer_index,
            kind_tag: rec.kind_tag,
            original_shape: rec.shape,
            weight_count: rec.weight_count,
            stages,
        });
    }
    if !cur.done() {
        return Err(Error::TruncatedFile(
            "stream has trailing bytes after the last stage".to_string(),
        ));
    }
    Ok(stacks)
}

/// Write a stream file; returns the byte count.
pub fn serialize<S: Real>(stacks: &[StageStack<S>], path: &Path) -> Result<u64> {
    let bytes = stream_to_bytes(stacks)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

pub fn deserialize<S: Real>(path: &Path) -> Result<Vec<StageStack<S>>> {
    let bytes = std::fs::read(path)?;
    stream_from_bytes(&bytes).map_err(|e| match e {
        Error::BadMagic { expected, .. } => Error::BadMagic {
            expected,
            context: path.display().to_string(),
        },
        other => other,
    })
}

/// Cut every layer to a prefix of its stages. Equals a from-scratch
/// serialization of the truncated stacks; nothing is re-quantized.
pub fn truncate<S: Real>(
    stacks: &[StageStack<S>],
    new_allocation: &[u16],
) -> Result<Vec<StageStack<S>>> {
    if stacks.len() != new_allocation.len() {
        return Err(Error::InvalidAllocation(format!(
            "allocation has {} entries for {} layers",
            new_allocation.len(),
            stacks.len()
        )));
    }
    stacks
        .iter()
        .zip(new_allocation)
        .map(|(stack, &k)| stack.truncated(k))
        .collect()
}

// ---------------------------------------------------------------------------
// Accounting

/// Cost-model bits `B = Σ (N_i + 2b)·n_i`: plane bits plus centroid bits,
/// no padding, no headers.
pub fn cost_model_bits<S: Real>(stacks: &[StageStack<S>]) -> u64 {
    stacks
        .iter()
        .map(|s| (s.weight_count as u64 + 2 * STORED_BITS as u64) * s.depth() as u64)
        .sum()
}

/// Payload bytes as serialized: per stage, two stored centroids plus the
/// byte-padded plane.
pub fn payload_bytes<S: Real>(stacks: &[StageStack<S>]) -> u64 {
    stacks
        .iter()
        .map(|s| s.depth() as u64 * (8 + s.weight_count.div_ceil(8) as u64))
        .sum()
}

/// Fixed header plus per-layer records.
pub fn header_bytes<S: Real>(stacks: &[StageStack<S>]) -> u64 {
    8 + stacks
        .iter()
        .map(|s| 14 + 4 * s.original_shape.len() as u64)
        .sum::<u64>()
}

/// Total serialized size in bits.
pub fn on_disk_bits<S: Real>(stacks: &[StageStack<S>]) -> u64 {
    8 * (header_bytes(stacks) + payload_bytes(stacks))
}

pub fn allocation_of<S: Real>(stacks: &[StageStack<S>]) -> Vec<u16> {
    stacks.iter().map(StageStack::depth).collect()
}

// ---------------------------------------------------------------------------
// Deltas

/// Per-layer upgrade record: stages to append and centroid pairs to replace
/// in retained stages.
#[derive(Debug, Clone)]
pub struct LayerDelta<S> {
    pub layer_index: usize,
    pub weight_count: usize,
    pub added: Vec<Stage<S>>,
    /// `(stage index, c0, c1)` for retained stages whose stored centroids
    /// changed (fine-tuning).
    pub centroid_updates: Vec<(u16, f32, f32)>,
}

/// Incremental payload converting one stream into another that extends it.
#[derive(Debug, Clone)]
pub struct DeltaPayload<S> {
    pub base_fingerprint: u64,
    pub target_fingerprint: u64,
    pub layers: Vec<LayerDelta<S>>,
}

impl<S: Real> DeltaPayload<S> {
    /// Bits spent on replacement centroid pairs; bounded by `2·b·Σ n_i` of
    /// the target allocation.
    pub fn centroid_update_bits(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.centroid_updates.len() as u64 * 2 * STORED_BITS as u64)
            .sum()
    }

    pub fn added_stage_count(&self) -> usize {
        self.layers.iter().map(|l| l.added.len()).sum()
    }
}

fn stored_pair<S: Real>(stage: &Stage<S>) -> (u32, u32) {
    (
        stage.centroids.0.to_stored().to_bits(),
        stage.centroids.1.to_stored().to_bits(),
    )
}

/// Diff two streams that share a quantization: the new stream must extend
/// the old allocation component-wise, and retained stages must carry
/// identical planes.
pub fn make_delta<S: Real>(
    old: &[StageStack<S>],
    new: &[StageStack<S>],
) -> Result<DeltaPayload<S>> {
    if old.len() != new.len() {
        return Err(Error::InvalidAllocation(format!(
            "streams have {} vs {} layers",
            old.len(),
            new.len()
        )));
    }
    let mut layers = Vec::with_capacity(old.len());
    for (o, n) in old.iter().zip(new) {
        if o.layer_index != n.layer_index || o.weight_count != n.weight_count {
            return Err(Error::ShapeMismatch {
                layer: o.layer_index,
                detail: "streams describe different layers".to_string(),
            });
        }
        if o.depth() > n.depth() {
            return Err(Error::InvalidAllocation(format!(
                "layer {}: old depth {} exceeds new depth {}; deltas only upgrade",
                o.layer_index,
                o.depth(),
                n.depth()
            )));
        }
        let mut updates = Vec::new();
        for (k, (os, ns)) in o.stages.iter().zip(&n.stages).enumerate() {
            if os.plane != ns.plane {
                return Err(Error::PlaneMismatch {
                    layer: o.layer_index,
                    stage: k,
                });
            }
            if stored_pair(os) != stored_pair(ns) {
                let (c0, c1) = (ns.centroids.0.to_stored(), ns.centroids.1.to_stored());
                updates.push((k as u16, c0, c1));
            }
        }
        layers.push(LayerDelta {
            layer_index: o.layer_index,
            weight_count: o.weight_count,
            added: n.stages[o.depth() as usize..].to_vec(),
            centroid_updates: updates,
        });
    }
    Ok(DeltaPayload {
        base_fingerprint: fingerprint(&stream_to_bytes(old)?),
        target_fingerprint: fingerprint(&stream_to_bytes(new)?),
        layers,
    })
}

/// Apply a delta to its base stream. The base fingerprint is checked before
/// anything is touched and the result must hash to the recorded target.
pub fn apply_delta<S: Real>(
    old: &[StageStack<S>],
    delta: &DeltaPayload<S>,
) -> Result<Vec<StageStack<S>>> {
    let actual = fingerprint(&stream_to_bytes(old)?);
    if actual != delta.base_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: delta.base_fingerprint,
            actual,
        });
    }
    if old.len() != delta.layers.len() {
        return Err(Error::InvalidAllocation(format!(
            "delta has {} layer records for {} layers",
            delta.layers.len(),
            old.len()
        )));
    }
    let mut out = Vec::with_capacity(old.len());
    for (stack, ld) in old.iter().zip(&delta.layers) {
        if stack.layer_index != ld.layer_index || stack.weight_count != ld.weight_count {
            return Err(Error::ShapeMismatch {
                layer: stack.layer_index,
                detail: "delta record does not match stream layer".to_string(),
            });
        }
        let mut stages = stack.stages.clone();
        for &(k, c0, c1) in &ld.centroid_updates {
            let stage = stages.get_mut(k as usize).ok_or_else(|| {
                Error::InvalidAllocation(format!(
                    "centroid update for stage {k} beyond depth {}",
                    stack.depth()
                ))
            })?;
            stage.centroids = (S::from_stored(c0), S::from_stored(c1));
            stage.degenerate = c0.to_bits() == c1.to_bits() && stage.plane.count_ones() == 0;
        }
        stages.extend(ld.added.iter().cloned());
        out.push(StageStack {
            layer_index: stack.layer_index,
            kind_tag: stack.kind_tag,
            original_shape: stack.original_shape.clone(),
            weight_count: stack.weight_count,
            stages,
        });
    }
    let result_fp = fingerprint(&stream_to_bytes(&out)?);
    if result_fp != delta.target_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: delta.target_fingerprint,
            actual: result_fp,
        });
    }
    Ok(out)
}

pub fn delta_to_bytes<S: Real>(delta: &DeltaPayload<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DELTA_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&delta.base_fingerprint.to_le_bytes());
    out.extend_from_slice(&delta.target_fingerprint.to_le_bytes());
    out.extend_from_slice(&(delta.layers.len() as u16).to_le_bytes());
    for layer in &delta.layers {
        out.extend_from_slice(&(layer.layer_index as u16).to_le_bytes());
        out.extend_from_slice(&(layer.weight_count as u64).to_le_bytes());
        out.extend_from_slice(&(layer.added.len() as u16).to_le_bytes());
        for stage in &layer.added {
            write_stage(&mut out, stage);
        }
        out.extend_from_slice(&(layer.centroid_updates.len() as u16).to_le_bytes());
        for &(k, c0, c1) in &layer.centroid_updates {
            out.extend_from_slice(&k.to_le_bytes());
            out.extend_from_slice(&c0.to_le_bytes());
            out.extend_from_slice(&c1.to_le_bytes());
        }
    }
    out
}

pub fn delta_from_bytes<S: Real>(bytes: &[u8]) -> Result<DeltaPayload<S>> {
    if bytes.len() < 4 || &bytes[..4] != DELTA_MAGIC {
        return Err(Error::BadMagic {
            expected: "delta (SQDL)",
            context: "delta bytes".to_string(),
        });
    }
    let mut cur = Cursor {
        bytes,
        pos: 4,
        context: "delta",
    };
    let version = cur.u16()?;
    if version != STREAM_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "delta",
            version,
        });
    }
    let base_fingerprint = cur.u64()?;
    let target_fingerprint = cur.u64()?;
    let layer_count = cur.u16()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer_index = cur.u16()? as usize;
        let weight_count = cur.u64()? as usize;
        let added_count = cur.u16()? as usize;
        let mut added = Vec::with_capacity(added_count);
        for _ in 0..added_count {
            added.push(read_stage(&mut cur, weight_count)?);
        }
        let update_count = cur.u16()? as usize;
        let mut centroid_updates = Vec::with_capacity(update_count);
        for _ in 0..update_count {
            let k = cur.u16()?;
            let c0 = cur.f32()?;
            let c1 = cur.f32()?;
            centroid_updates.push((k, c0, c1));
        }
        layers.push(LayerDelta {
            layer_index,
            weight_count,
            added,
            centroid_updates,
        });
    }
    if !cur.done() {
        return Err(Error::TruncatedFile("delta has trailing bytes".to_string()));
    }
    Ok(DeltaPayload {
        base_fingerprint,
        target_fingerprint,
        layers,
    })
}

pub fn write_delta<S: Real>(delta: &DeltaPayload<S>, path: &Path) -> Result<u64> {
    let bytes = delta_to_bytes(delta);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_delta<S: Real>(path: &Path) -> Result<DeltaPayload<S>> {
    let bytes = std::fs::read(path)?;
    delta_from_bytes(&bytes).map_err(|e| match e {
        Error::BadMagic { expected, .. } => Error::BadMagic {
            expected,
            context: path.display().to_string(),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hquant::{hierarchical_quantize, quantize_model, reconstruct};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn seeded_stacks(seed: u64, layers: usize) -> Vec<StageStack<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..layers)
            .map(|i| {
                let len = rng.gen_range(8..200);
                let n = rng.gen_range(1..=6);
                let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let mut stack = hierarchical_quantize(&weights, n).unwrap();
                stack.layer_index = i;
                stack
            })
            .collect()
    }

    /// Serialized-content equality: everything the wire format carries.
    fn content_eq(a: &[StageStack<f64>], b: &[StageStack<f64>]) -> bool {
        stream_to_bytes(a).unwrap() == stream_to_bytes(b).unwrap()
    }

    #[test]
    fn round_trip_restores_stages() {
        let stacks = vec![hierarchical_quantize::<f64>(&[0.0, 1.0, 4.0, 5.0], 2).unwrap()];
        let bytes = stream_to_bytes(&stacks).unwrap();
        let restored = stream_from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(restored.len(), 1);
        assert_eq!(restored[0].stages.len(), 2);
        for (orig, back) in stacks[0].stages.iter().zip(&restored[0].stages) {
            assert_eq!(orig.centroids, back.centroids);
            assert_eq!(orig.plane, back.plane);
            assert_eq!(orig.degenerate, back.degenerate);
        }
        assert!(content_eq(&stacks, &restored));
        for k in 1..=2 {
            assert_eq!(
                reconstruct(&stacks[0], k).unwrap(),
                reconstruct(&restored[0], k).unwrap()
            );
        }
    }

    #[test]
    fn degenerate_plane_survives_round_trip() {
        let stacks = vec![hierarchical_quantize::<f64>(&[5.0, 5.0, 5.0], 1).unwrap()];
        let restored = stream_from_bytes::<f64>(&stream_to_bytes(&stacks).unwrap()).unwrap();
        assert!(restored[0].stages[0].degenerate);
        assert_eq!(reconstruct(&restored[0], 1).unwrap(), vec![5.0; 3]);
    }

    #[test]
    fn payload_matches_layout_arithmetic() {
        // N=10000, n=5: index bits 50000, centroid bits 320; planes divide
        // into bytes evenly, so payload bytes equal (50000 + 320) / 8.
        let weights: Vec<f64> = (0..10000).map(|i| (i % 37) as f64 * 0.1).collect();
        let stacks = vec![hierarchical_quantize(&weights, 5).unwrap()];
        assert_eq!(payload_bytes(&stacks), (50_000 + 320) / 8);
        let bytes = stream_to_bytes(&stacks).unwrap();
        assert_eq!(
            bytes.len() as u64,
            header_bytes(&stacks) + payload_bytes(&stacks)
        );
        // within 1% of the bare payload plus the fixed header
        let bound = 1.01 * ((50_000.0 + 320.0) / 8.0) + header_bytes(&stacks) as f64;
        assert!((bytes.len() as f64) <= bound);
    }

    #[test]
    fn cost_model_bits_follow_eq4() {
        let stacks = seeded_stacks(3, 3);
        let expected: u64 = stacks
            .iter()
            .map(|s| (s.weight_count as u64 + 64) * s.depth() as u64)
            .sum();
        assert_eq!(cost_model_bits(&stacks), expected);
    }

    #[test]
    fn truncation_is_a_byte_prefix_per_layer() {
        let weights: Vec<f64> = (0..50).map(|i| (i as f64 * 0.77).sin()).collect();
        let full = vec![hierarchical_quantize(&weights, 3).unwrap()];
        let cut = truncate(&full, &[2]).unwrap();
        let fresh = vec![hierarchical_quantize(&weights, 2).unwrap()];
        assert!(content_eq(&cut, &fresh));

        let same = truncate(&full, &[3]).unwrap();
        assert!(content_eq(&same, &full));
    }

    #[test]
    fn truncate_rejects_out_of_range_depths() {
        let stacks = seeded_stacks(11, 2);
        let alloc = allocation_of(&stacks);
        let mut too_deep = alloc.clone();
        too_deep[0] += 1;
        assert!(truncate(&stacks, &too_deep).is_err());
        let mut zero = alloc;
        zero[1] = 0;
        assert!(truncate(&stacks, &zero).is_err());
    }

    #[test]
    fn truncate_then_reconstruct_matches_shallow_quantization() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..20 {
            let len = rng.gen_range(4..100);
            let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let n = rng.gen_range(2..=6);
            let k = rng.gen_range(1..n);
            let full = hierarchical_quantize(&weights, n).unwrap();
            let cut = full.truncated(k).unwrap();
            let fresh = hierarchical_quantize(&weights, k).unwrap();
            assert_eq!(
                reconstruct(&cut, k).unwrap(),
                reconstruct(&fresh, k).unwrap()
            );
        }
    }

    #[test]
    fn delta_upgrade_round_trips_bit_exactly() {
        let stacks = seeded_stacks(5, 4);
        let alloc = allocation_of(&stacks);
        let low: Vec<u16> = alloc.iter().map(|&n| n.max(2) - 1).collect();
        let old = truncate(&stacks, &low).unwrap();
        let delta = make_delta(&old, &stacks).unwrap();
        let upgraded = apply_delta(&old, &delta).unwrap();
        assert!(content_eq(&upgraded, &stacks));
    }

    #[test]
    fn single_stage_upgrade_carries_exactly_one_plane_and_centroid_pair() {
        let full = vec![hierarchical_quantize::<f64>(&[0.0, 1.0, 4.0, 5.0], 2).unwrap()];
        let base = truncate(&full, &[1]).unwrap();
        let delta = make_delta(&base, &full).unwrap();
        assert_eq!(delta.added_stage_count(), 1);
        assert!(delta.layers[0].centroid_updates.is_empty());
        // magic 4 + version 2 + fingerprints 16 + L 2
        // + layer record: index 2 + N 8 + added count 2
        // + one stage: centroids 8 + plane 1 byte (4 weights)
        // + update count 2
        let bytes = delta_to_bytes(&delta);
        assert_eq!(bytes.len(), 4 + 2 + 16 + 2 + 2 + 8 + 2 + 8 + 1 + 2);
    }

    #[test]
    fn identical_streams_produce_an_identity_delta() {
        let stacks = seeded_stacks(8, 2);
        let delta = make_delta(&stacks, &stacks).unwrap();
        assert_eq!(delta.added_stage_count(), 0);
        assert_eq!(delta.centroid_update_bits(), 0);
        let applied = apply_delta(&stacks, &delta).unwrap();
        assert!(content_eq(&applied, &stacks));
    }

    #[test]
    fn fingerprint_mismatch_is_detected() {
        let stacks = seeded_stacks(9, 2);
        let other = seeded_stacks(10, 2);
        let alloc = allocation_of(&stacks);
        let low: Vec<u16> = alloc.iter().map(|&n| n.max(2) - 1).collect();
        let old = truncate(&stacks, &low).unwrap();
        let delta = make_delta(&old, &stacks).unwrap();
        assert!(matches!(
            apply_delta(&other, &delta),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn plane_mismatch_between_unrelated_streams_is_detected() {
        let a = seeded_stacks(12, 1);
        let mut b = seeded_stacks(12, 1);
        // Same quantization, then one plane bit flipped: no longer shared.
        let bit = b[0].stages[0].plane.get(0);
        b[0].stages[0].plane.set(0, !bit);
        assert!(matches!(
            make_delta(&a, &b),
            Err(Error::PlaneMismatch { layer: 0, stage: 0 })
        ));
    }

    #[test]
    fn delta_is_smaller_than_a_full_stream_when_planes_are_shared() {
        let model = crate::toy::lenet_shaped::<f64>(4, 2);
        let stacks = quantize_model(&model, &[8, 8, 5, 5]).unwrap();
        let low = truncate(&stacks, &[4, 4, 3, 3]).unwrap();
        let delta = make_delta(&low, &stacks).unwrap();
        let delta_bytes = delta_to_bytes(&delta).len();
        let full_bytes = stream_to_bytes(&stacks).unwrap().len();
        assert!(
            delta_bytes < full_bytes,
            "delta {delta_bytes} >= full {full_bytes}"
        );
    }

    #[test]
    fn delta_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stacks = seeded_stacks(14, 3);
        let low: Vec<u16> = allocation_of(&stacks).iter().map(|&n| n.max(2) - 1).collect();
        let old = truncate(&stacks, &low).unwrap();
        let delta = make_delta(&old, &stacks).unwrap();
        let path = dir.path().join("upgrade.sqdl");
        write_delta(&delta, &path).unwrap();
        let read_back = read_delta::<f64>(&path).unwrap();
        assert_eq!(delta_to_bytes(&read_back), delta_to_bytes(&delta));
        let upgraded = apply_delta(&old, &read_back).unwrap();
        assert!(content_eq(&upgraded, &stacks));
    }

    #[test]
    fn header_overhead_is_below_one_percent_for_large_layers() {
        let weights: Vec<f64> = (0..10_000).map(|i| ((i * 7) % 101) as f64 * 0.03).collect();
        let stacks = vec![hierarchical_quantize(&weights, 3).unwrap()];
        let header = header_bytes(&stacks);
        let payload = payload_bytes(&stacks);
        assert!(
            (header as f64) < 0.01 * payload as f64,
            "header {header} vs payload {payload}"
        );
    }

    #[test]
    fn file_round_trip_and_magic_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.sqbs");
        let stacks = seeded_stacks(30, 3);
        let bytes_written = serialize(&stacks, &path).unwrap();
        assert_eq!(bytes_written, std::fs::metadata(&path).unwrap().len());
        let restored = deserialize::<f64>(&path).unwrap();
        assert!(content_eq(&stacks, &restored));

        let mut corrupted = std::fs::read(&path).unwrap();
        corrupted[1] = b'x';
        std::fs::write(&path, &corrupted).unwrap();
        assert!(matches!(
            deserialize::<f64>(&path),
            Err(Error::BadMagic { .. })
        ));

        let bytes = stream_to_bytes(&stacks).unwrap();
        assert!(matches!(
            stream_from_bytes::<f64>(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedFile(_))
        ));
    }
}
