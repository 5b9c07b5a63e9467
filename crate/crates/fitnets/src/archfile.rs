//! Plain-text architecture files.
//!
//! ```text
//! # comments and blank lines are ignored
//! name desk-student
//! input 1x14x14
//! hint 6 2
//! conv 3x3x16 pad
//! maxout 2
//! pool 4x4 overlap 2x2
//! gpool
//! fc 250 pieces 2
//! softmax 10
//! ```
//!
//! `hint G H` declares the student's guided conv layer `G` and the teacher's
//! hint conv layer `H`. [`write_arch`] emits the canonical form, which
//! [`parse_arch`] reads back to an identical spec.

use std::path::Path;

use fitnets_core::netarch::{build_paper_arch, infer_shapes, ArchitectureSpec, FeatureShape, HintPair, LayerSpec};
use fitnets_core::Error as CoreError;

use crate::error::{FitError, Result};

fn dims<const N: usize>(text: &str) -> Option<[usize; N]> {
    let parts: Vec<usize> = text.split('x').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

fn positive(v: usize) -> Option<usize> {
    (v >= 1).then_some(v)
}

/// One layer from its text form.
pub fn parse_layer(line: &str) -> std::result::Result<LayerSpec, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let bad = || format!("cannot parse `{line}`");
    let num = |t: &str| t.parse::<usize>().ok().and_then(positive).ok_or_else(bad);
    let layer = match tokens.as_slice() {
        ["conv", k, rest @ ..] => {
            let [kh, kw, out_channels] = dims(k).ok_or_else(bad)?;
            let padded = match rest {
                [] => false,
                ["pad"] => true,
                _ => return Err(bad()),
            };
            LayerSpec::Conv { kh, kw, out_channels, padded }
        }
        ["pool", w, rest @ ..] => {
            let [wh, ww] = dims(w).ok_or_else(bad)?;
            let [oh, ow] = match rest {
                [] => [0, 0],
                ["overlap", o] => dims(o).ok_or_else(bad)?,
                _ => return Err(bad()),
            };
            LayerSpec::MaxPool { wh, ww, oh, ow }
        }
        ["gpool"] => LayerSpec::GlobalMaxPool,
        ["maxout", p] => LayerSpec::Maxout { pieces: num(p)? },
        ["fc", u] => LayerSpec::FullyConnected { units: num(u)?, pieces: 1 },
        ["fc", u, "pieces", p] => LayerSpec::FullyConnected { units: num(u)?, pieces: num(p)? },
        ["relu"] => LayerSpec::Relu,
        ["sigmoid"] => LayerSpec::Sigmoid,
        ["softmax", k] => LayerSpec::SoftmaxHead { classes: num(k)? },
        _ => return Err(bad()),
    };
    let extents_ok = match layer {
        LayerSpec::Conv { kh, kw, out_channels, .. } => kh >= 1 && kw >= 1 && out_channels >= 1,
        LayerSpec::MaxPool { wh, ww, .. } => wh >= 1 && ww >= 1,
        _ => true,
    };
    if !extents_ok {
        return Err(format!("`{line}`: extents must be at least 1"));
    }
    Ok(layer)
}

/// Parses and shape-checks an architecture. `source` names the text in
/// diagnostics and is the default architecture name.
pub fn parse_arch(text: &str, source: &str) -> Result<ArchitectureSpec> {
    let mut name = None;
    let mut input = None;
    let mut hint = None;
    let mut layers = Vec::new();
    let mut layer_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match key {
            "name" => {
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(FitError::parse(source, line_no, "name", "expected a single word"));
                }
                name = Some(rest.to_string());
            }
            "input" => {
                let [c, h, w] = dims(rest)
                    .filter(|d: &[usize; 3]| d.iter().all(|&v| v >= 1))
                    .ok_or_else(|| FitError::parse(source, line_no, "input", format!("expected CxHxW, got `{rest}`")))?;
                input = Some(FeatureShape::new(c, h, w));
            }
            "hint" => {
                let pair: Vec<usize> = rest
                    .split_whitespace()
                    .map(|t| t.parse().ok().and_then(positive))
                    .collect::<Option<_>>()
                    .filter(|v: &Vec<usize>| v.len() == 2)
                    .ok_or_else(|| {
                        FitError::parse(source, line_no, "hint", format!("expected `hint GUIDED HINT`, got `{rest}`"))
                    })?;
                hint = Some(HintPair { guided: pair[0], hint: pair[1] });
            }
            _ => {
                layers.push(parse_layer(line).map_err(|m| FitError::parse(source, line_no, key, m))?);
                layer_lines.push(line_no);
            }
        }
    }
    let input = input.ok_or_else(|| FitError::parse(source, 0, "input", "missing `input CxHxW` line"))?;
    let mut arch = ArchitectureSpec::new(name.unwrap_or_else(|| source.to_string()), input, layers);
    arch.hint = hint;
    match infer_shapes(&arch) {
        Ok(_) => {}
        Err(CoreError::Layer { index, layer, msg }) => {
            let line = layer_lines.get(index).copied().unwrap_or(0);
            return Err(FitError::parse(source, line, &layer, msg));
        }
        Err(e) => return Err(FitError::parse(source, 0, "architecture", e.to_string())),
    }
    if let Some(h) = hint {
        if h.guided > arch.conv_count() {
            return Err(FitError::parse(
                source,
                0,
                "hint",
                format!("guided layer {} but only {} conv layers", h.guided, arch.conv_count()),
            ));
        }
    }
    Ok(arch)
}

/// Canonical text form.
pub fn write_arch(arch: &ArchitectureSpec) -> String {
    let mut out = format!("name {}\ninput {}\n", arch.name, arch.input);
    if let Some(h) = arch.hint {
        out.push_str(&format!("hint {} {}\n", h.guided, h.hint));
    }
    for layer in &arch.layers {
        out.push_str(&format!("{layer}\n"));
    }
    out
}

/// A built-in architecture name or a path to an architecture file; relative
/// paths are taken from `base`.
pub fn resolve_arch(reference: &str, base: &Path) -> Result<ArchitectureSpec> {
    match build_paper_arch(reference) {
        Ok(a) => Ok(a),
        Err(_) => {
            let path = base.join(reference);
            if !path.exists() {
                return Err(FitError::Usage(format!(
                    "`{reference}` is neither a built-in architecture nor a file"
                )));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| FitError::io(&path, e))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(reference);
            parse_arch(&text, stem)
        }
    }
}
