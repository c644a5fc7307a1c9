//! Golden-trace recording and bit-exact comparison against the engine.

use serde::Serialize;

use crate::engine::{Engine, EngineOptions};
use crate::error::Result;
use crate::fault::NoFaults;
use crate::io::{GoldenTrace, LabeledImage};
use crate::model::ModelGraph;

/// Runs each image fault-free and keeps every layer's buffer.
pub fn record_traces(
    model: &ModelGraph,
    samples: &[LabeledImage],
    options: EngineOptions,
) -> Result<Vec<GoldenTrace>> {
    let engine = Engine::new(
        model,
        EngineOptions {
            trace: true,
            ..options
        },
    );
    let mut arena = engine.new_arena(true);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = engine.infer(&s.image, &mut arena, &mut NoFaults)?;
            Ok(GoldenTrace {
                image_index: i as u32,
                label: p.label as u8,
                input: s.image.clone(),
                layers: p.trace.unwrap_or_default(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub image_index: u32,
    pub layer: String,
    /// 1-based position of the layer in the model.
    pub layer_position: usize,
    /// First differing element, when both buffers exist.
    pub offset: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Validation {
    Ok { images: usize },
    Diverged(Divergence),
}

/// Replays each trace's input and reports the first layer whose buffer
/// differs from the recorded one.
pub fn validate_traces(
    model: &ModelGraph,
    traces: &[GoldenTrace],
    options: EngineOptions,
) -> Result<Validation> {
    let engine = Engine::new(
        model,
        EngineOptions {
            trace: true,
            ..options
        },
    );
    let mut arena = engine.new_arena(true);
    let first = model
        .layers()
        .first()
        .map_or("<empty>", |l| l.name.as_str());
    for t in traces {
        let diverged = |layer: &str, position: usize, offset: Option<usize>, detail: String| {
            Validation::Diverged(Divergence {
                image_index: t.image_index,
                layer: layer.to_string(),
                layer_position: position,
                offset,
                detail,
            })
        };
        if t.input.shape() != model.input_shape() {
            return Ok(diverged(
                first,
                1,
                None,
                format!(
                    "trace input shape {:?}, model expects {:?}",
                    t.input.shape(),
                    model.input_shape()
                ),
            ));
        }
        let prediction = engine.infer(&t.input, &mut arena, &mut NoFaults)?;
        let ours = prediction.trace.unwrap_or_default();
        for (pos, snap) in ours.iter().enumerate() {
            let Some(golden) = t.layers.get(pos) else {
                return Ok(diverged(
                    &snap.layer,
                    pos + 1,
                    None,
                    "missing from trace".into(),
                ));
            };
            if golden.layer != snap.layer {
                return Ok(diverged(
                    &snap.layer,
                    pos + 1,
                    None,
                    format!("trace has layer `{}` here", golden.layer),
                ));
            }
            if golden.values != snap.values {
                let offset = golden
                    .values
                    .iter()
                    .zip(&snap.values)
                    .position(|(a, b)| a != b)
                    .unwrap_or(golden.values.len().min(snap.values.len()));
                let detail = match (golden.values.get(offset), snap.values.get(offset)) {
                    (Some(g), Some(e)) => format!("expected {g}, engine produced {e}"),
                    _ => format!(
                        "trace holds {} values, engine produced {}",
                        golden.values.len(),
                        snap.values.len()
                    ),
                };
                return Ok(diverged(&snap.layer, pos + 1, Some(offset), detail));
            }
        }
        if t.layers.len() > ours.len() {
            let extra = &t.layers[ours.len()].layer;
            return Ok(diverged(
                extra,
                ours.len() + 1,
                None,
                "trace has more layers than the model".into(),
            ));
        }
        if usize::from(t.label) != prediction.label {
            let last = model.layers().last().map_or("<empty>", |l| l.name.as_str());
            return Ok(diverged(
                last,
                model.layers().len(),
                None,
                format!("trace label {}, engine label {}", t.label, prediction.label),
            ));
        }
    }
    Ok(Validation::Ok {
        images: traces.len(),
    })
}
