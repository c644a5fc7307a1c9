//! The NNFI container: quantized model files and golden activation traces.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! header   magic "NNFI" | version u16 = 1 | record count u16
//! layer    kind u8 | name (u16 len + UTF-8) | dims (u32 count + u32 each)
//!          | weight_dec i8 | bias_dec i8 | output_dec i8
//!          | output_right_shift u8 | bias_left_shift u8
//!          | weights i8[..] | bias i8[..]
//! trace    0x80 | image index u32 | label u8
//!          | input dims (u32 count + u32 each) | input dec i8 | input i8[..]
//!          | snapshot count u16 | { name (u16 len + UTF-8) | len u32 | i8[len] }
//! ```
//!
//! Layer `dims` hold the layer's input shape, followed by `[Z, K]` for a
//! conv layer (`[H, W, C, Z, K]`) and `[out]` for a dense layer
//! (`[in, out]`). Payload sizes follow from the dims; anything left after
//! the last record is an error.

use std::fs;
use std::path::Path;

use crate::engine::LayerSnapshot;
use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, ModelGraph};
use crate::tensor::QuantTensor;

pub const MAGIC: [u8; 4] = *b"NNFI";
pub const VERSION: u16 = 1;
pub const TRACE_TAG: u8 = 0x80;

/// Per-layer buffers of one reference inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenTrace {
    pub image_index: u32,
    pub label: u8,
    pub input: QuantTensor,
    pub layers: Vec<LayerSnapshot>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn header(count: usize) -> Result<Self> {
        let count = u16::try_from(count).map_err(|_| Error::Payload {
            layer: "<header>".into(),
            detail: format!("{count} records do not fit the u16 count"),
        })?;
        let mut w = Writer(Vec::new());
        w.0.extend(MAGIC);
        w.0.extend(VERSION.to_le_bytes());
        w.0.extend(count.to_le_bytes());
        Ok(w)
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn dec(&mut self, layer: &str, v: i32) -> Result<()> {
        let v = i8::try_from(v).map_err(|_| Error::Payload {
            layer: layer.into(),
            detail: format!("dec {v} does not fit in i8"),
        })?;
        self.0.push(v as u8);
        Ok(())
    }

    fn u16(&mut self, v: u16) {
        self.0.extend(v.to_le_bytes());
    }

    fn u32(&mut self, layer: &str, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Payload {
            layer: layer.into(),
            detail: format!("{v} does not fit in u32"),
        })?;
        self.0.extend(v.to_le_bytes());
        Ok(())
    }

    fn name(&mut self, name: &str) -> Result<()> {
        let len = u16::try_from(name.len()).map_err(|_| Error::Payload {
            layer: name.into(),
            detail: "name longer than 65535 bytes".into(),
        })?;
        self.u16(len);
        self.0.extend(name.as_bytes());
        Ok(())
    }

    fn dims(&mut self, layer: &str, dims: &[usize]) -> Result<()> {
        self.u32(layer, dims.len())?;
        dims.iter().try_for_each(|&d| self.u32(layer, d))
    }

    fn bytes(&mut self, values: &[i8]) {
        self.0.extend(values.iter().map(|&v| v as u8));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated { what: what() });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &dyn Fn() -> String) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn i8(&mut self, what: &dyn Fn() -> String) -> Result<i8> {
        Ok(self.u8(what)? as i8)
    }

    fn u16(&mut self, what: &dyn Fn() -> String) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &dyn Fn() -> String) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn name(&mut self, what: &dyn Fn() -> String) -> Result<String> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Payload {
            layer: what(),
            detail: "name is not valid UTF-8".into(),
        })
    }

    fn dims(&mut self, what: &dyn Fn() -> String) -> Result<Vec<usize>> {
        let count = self.u32(what)? as usize;
        // every dim needs 4 bytes; reject absurd counts before allocating
        if count > (self.bytes.len() - self.pos) / 4 {
            return Err(Error::Truncated { what: what() });
        }
        (0..count).map(|_| Ok(self.u32(what)? as usize)).collect()
    }

    fn values(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<Vec<i8>> {
        Ok(self.take(n, what)?.iter().map(|&b| b as i8).collect())
    }

    fn header(&mut self) -> Result<usize> {
        let hdr = || "header".to_string();
        let magic: [u8; 4] = self.take(4, &hdr)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = self.u16(&hdr)?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        Ok(self.u16(&hdr)? as usize)
    }

    fn finish(&self) -> Result<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            count => Err(Error::TrailingBytes { count }),
        }
    }
}

fn checked_product(layer: &str, dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Payload {
            layer: layer.into(),
            detail: format!("dims {dims:?} overflow"),
        })
}

pub fn model_to_bytes(model: &ModelGraph) -> Result<Vec<u8>> {
    if model.input_dec() != 0 {
        return Err(Error::Payload {
            layer: "<input>".into(),
            detail: format!(
                "input dec {} cannot be stored; the format fixes it to 0",
                model.input_dec()
            ),
        });
    }
    let mut w = Writer::header(model.layers().len())?;
    for layer in model.layers() {
        let name = layer.name.as_str();
        w.u8(layer.kind.tag());
        w.name(name)?;
        let mut dims = layer.input_shape.clone();
        match layer.kind {
            LayerKind::Conv2d => {
                dims.extend([layer.kernel_size().unwrap_or(0), layer.out_channels()])
            }
            LayerKind::Dense => dims.push(layer.out_channels()),
            _ => {}
        }
        w.dims(name, &dims)?;
        w.dec(name, layer.weights.as_ref().map_or(0, QuantTensor::dec))?;
        w.dec(name, layer.bias.as_ref().map_or(0, QuantTensor::dec))?;
        w.dec(name, layer.output_dec)?;
        w.u8(layer.output_right_shift);
        w.u8(layer.bias_left_shift);
        if let (Some(weights), Some(bias)) = (&layer.weights, &layer.bias) {
            w.bytes(weights.values());
            w.bytes(bias.values());
        }
    }
    Ok(w.0)
}

fn read_layer(r: &mut Reader, tag: u8, index: usize) -> Result<LayerSpec> {
    let Some(kind) = LayerKind::from_tag(tag) else {
        return Err(Error::UnknownTag { tag, index });
    };
    let at = format!("record {index}");
    let name = r.name(&|| format!("{at} name"))?;
    let what = |part: &str| {
        let s = format!("layer `{name}` {part}");
        move || s.clone()
    };
    let dims = r.dims(&what("dims"))?;
    let weight_dec = r.i8(&what("decs"))?;
    let bias_dec = r.i8(&what("decs"))?;
    let output_dec = i32::from(r.i8(&what("decs"))?);
    let output_right_shift = r.u8(&what("shifts"))?;
    let bias_left_shift = r.u8(&what("shifts"))?;

    let payload = |detail: String| Error::Payload {
        layer: name.clone(),
        detail,
    };
    let (input_shape, weight_shape, out) = match kind {
        LayerKind::Conv2d => {
            let &[h, w, c, z, k] = dims.as_slice() else {
                return Err(payload(format!("conv needs [H, W, C, Z, K], got {dims:?}")));
            };
            (vec![h, w, c], vec![z, z, c, k], k)
        }
        LayerKind::Dense => {
            let &[n_in, n_out] = dims.as_slice() else {
                return Err(payload(format!("dense needs [in, out], got {dims:?}")));
            };
            (vec![n_in], vec![n_in, n_out], n_out)
        }
        _ => (dims, Vec::new(), 0),
    };

    let mut spec = if kind.has_params() {
        let n_weights = checked_product(&name, &weight_shape)?;
        let weights = r.values(n_weights, &what("weights"))?;
        let bias = r.values(out, &what("bias"))?;
        let weights = QuantTensor::new(weight_shape, weights, i32::from(weight_dec))?;
        let bias = QuantTensor::new(vec![out], bias, i32::from(bias_dec))?;
        match kind {
            LayerKind::Conv2d => {
                let [h, w, c] = [input_shape[0], input_shape[1], input_shape[2]];
                LayerSpec::conv2d(
                    &name,
                    [h, w, c],
                    weights,
                    bias,
                    output_right_shift,
                    bias_left_shift,
                    output_dec,
                )?
            }
            _ => LayerSpec::dense(
                &name,
                weights,
                bias,
                output_right_shift,
                bias_left_shift,
                output_dec,
            )?,
        }
    } else {
        if weight_dec != 0 || bias_dec != 0 || output_right_shift != 0 || bias_left_shift != 0 {
            return Err(payload(
                "parameterless layer with nonzero weight metadata".into(),
            ));
        }
        LayerSpec::simple(kind, &name, input_shape, output_dec)?
    };
    spec.name = name;
    Ok(spec)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.header()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let tag = r.u8(&|| format!("record {index} tag"))?;
        layers.push(read_layer(&mut r, tag, index)?);
    }
    r.finish()?;
    ModelGraph::new(layers, 0)
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

pub fn traces_to_bytes(traces: &[GoldenTrace]) -> Result<Vec<u8>> {
    let mut w = Writer::header(traces.len())?;
    for t in traces {
        let ctx = format!("trace {}", t.image_index);
        w.u8(TRACE_TAG);
        w.u32(&ctx, t.image_index as usize)?;
        w.u8(t.label);
        w.dims(&ctx, t.input.shape())?;
        w.dec(&ctx, t.input.dec())?;
        w.bytes(t.input.values());
        let count = u16::try_from(t.layers.len()).map_err(|_| Error::Payload {
            layer: ctx.clone(),
            detail: "too many snapshots".into(),
        })?;
        w.u16(count);
        for snap in &t.layers {
            w.name(&snap.layer)?;
            w.u32(&snap.layer, snap.values.len())?;
            w.bytes(&snap.values);
        }
    }
    Ok(w.0)
}

pub fn traces_from_bytes(bytes: &[u8]) -> Result<Vec<GoldenTrace>> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.header()?;
    let mut traces = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let what = |part: &'static str| move || format!("trace record {index} {part}");
        let tag = r.u8(&what("tag"))?;
        if tag != TRACE_TAG {
            return Err(Error::UnknownTag { tag, index });
        }
        let image_index = r.u32(&what("image index"))?;
        let label = r.u8(&what("label"))?;
        let dims = r.dims(&what("input dims"))?;
        let dec = i32::from(r.i8(&what("input dec"))?);
        let n = checked_product("<trace input>", &dims)?;
        let input = QuantTensor::new(dims, r.values(n, &what("input"))?, dec)?;
        let snaps = r.u16(&what("snapshot count"))?;
        let mut layers = Vec::with_capacity(snaps as usize);
        for _ in 0..snaps {
            let layer = r.name(&what("snapshot name"))?;
            let len = r.u32(&what("snapshot length"))? as usize;
            let values = r.values(len, &what("snapshot values"))?;
            layers.push(LayerSnapshot { layer, values });
        }
        traces.push(GoldenTrace {
            image_index,
            label,
            input,
            layers,
        });
    }
    r.finish()?;
    Ok(traces)
}

pub fn save_traces(traces: &[GoldenTrace], path: &Path) -> Result<()> {
    let bytes = traces_to_bytes(traces)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_traces(path: &Path) -> Result<Vec<GoldenTrace>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    traces_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference() -> ModelGraph {
        synthetic::reference_cnn(&mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn empty_model_is_a_bare_header() {
        let empty = ModelGraph::new(vec![], 0).unwrap();
        let bytes = model_to_bytes(&empty).unwrap();
        assert_eq!(bytes, b"NNFI\x01\x00\x00\x00");
        assert_eq!(model_from_bytes(&bytes).unwrap(), empty);
    }

    #[test]
    fn reference_model_round_trip() {
        let model = reference();
        let bytes = model_to_bytes(&model).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.param_count(), 70_914);
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn header_errors() {
        let mut bytes = model_to_bytes(&reference()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
        let mut bytes = model_to_bytes(&reference()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn truncation_names_the_layer() {
        let bytes = model_to_bytes(&reference()).unwrap();
        // cut inside the dense1 weight payload
        let cut = bytes.len() - 24 - 250 - 200;
        match model_from_bytes(&bytes[..cut]) {
            Err(Error::Truncated { what }) => assert!(what.contains("dense1"), "{what}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = model_to_bytes(&reference()).unwrap();
        bytes.push(0);
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::TrailingBytes { count: 1 })
        ));
    }

    #[test]
    fn trace_record_is_not_a_layer() {
        let trace = GoldenTrace {
            image_index: 3,
            label: 4,
            input: QuantTensor::new(vec![2, 1, 1], vec![1, -1], 0).unwrap(),
            layers: vec![LayerSnapshot {
                layer: "conv1".into(),
                values: vec![5, 6, 7],
            }],
        };
        let bytes = traces_to_bytes(std::slice::from_ref(&trace)).unwrap();
        assert_eq!(traces_from_bytes(&bytes).unwrap(), vec![trace]);
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::UnknownTag { tag: TRACE_TAG, .. })
        ));
        let model = model_to_bytes(&reference()).unwrap();
        assert!(matches!(
            traces_from_bytes(&model),
            Err(Error::UnknownTag { .. })
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = save_model(&reference(), Path::new("/nonexistent-dir/x/model.nnfi")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
