//! Hybrid sequence embedding: token features from a width-3 circular
//! convolution, parameter-free trigonometric positional encoding, and summed
//! calendar lookup tables.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::dataflow::CalendarFeatures;
use crate::error::{FcError, Result};
use crate::numerics::{GradGraph, NodeId, Tensor};

/// Row counts of the (hour, weekday, day, month) lookup tables.
pub const TABLE_ROWS: [usize; 4] = [24, 7, 31, 12];
pub const TABLE_NAMES: [&str; 4] = ["hour", "weekday", "day", "month"];

thread_local! {
    static POS_CACHE: RefCell<HashMap<(usize, usize), Tensor>> = RefCell::new(HashMap::new());
}

/// Sinusoidal positional encoding: `P[pos][2i] = sin(pos/10000^(2i/d))`,
/// `P[pos][2i+1] = cos(pos/10000^(2i/d))`. Deterministic and parameter-free;
/// cached per (length, width).
pub fn positional_encoding(len: usize, d_m: usize) -> Tensor {
    assert!(d_m % 2 == 0, "positional encoding needs an even width");
    POS_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, d_m))
            .or_insert_with(|| {
                Tensor::from_fn(len, d_m, |pos, col| {
                    let i = col / 2;
                    let angle =
                        pos as f64 / 10_000f64.powf(2.0 * i as f64 / d_m as f64);
                    if col % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
            })
            .clone()
    })
}

/// Validates calendar fields against the table ranges and converts them to
/// 0-based row indices, naming the offending field on failure.
pub fn calendar_indices(calendar: &[CalendarFeatures]) -> Result<Vec<[usize; 4]>> {
    calendar
        .iter()
        .map(|c| {
            let one_based = [c.hour as usize, c.weekday as usize, c.day as usize, c.month as usize];
            let idx = c.indices();
            for (f, (&row, rows)) in idx.iter().zip(TABLE_ROWS).enumerate() {
                if row >= rows {
                    return Err(FcError::Data(format!(
                        "calendar field `{}` value {} outside table of {} rows",
                        TABLE_NAMES[f], one_based[f], rows
                    )));
                }
            }
            Ok(idx)
        })
        .collect()
}

/// Checks embedding parameter shapes: a 3×d_m kernel and four tables with
/// the canonical row counts, all sharing an even width d_m.
pub fn validate_embedding_shapes(kernel: &Tensor, tables: &[Tensor; 4]) -> Result<usize> {
    let d_m = kernel.cols;
    if kernel.rows != 3 {
        return Err(FcError::Shape(format!(
            "token kernel must be 3×d_m, got {}×{}",
            kernel.rows, kernel.cols
        )));
    }
    if d_m == 0 || d_m % 2 != 0 {
        return Err(FcError::Shape(format!(
            "embedding width must be even and positive, got {d_m}"
        )));
    }
    for (t, (table, rows)) in tables.iter().zip(TABLE_ROWS).enumerate() {
        if table.rows != rows || table.cols != d_m {
            return Err(FcError::Shape(format!(
                "{} table must be {}×{}, got {}×{}",
                TABLE_NAMES[t], rows, d_m, table.rows, table.cols
            )));
        }
    }
    Ok(d_m)
}

/// Builds the hybrid embedding in the graph: circular token convolution plus
/// positional constant plus calendar table rows, all summed into L×d_m.
///
/// `pos` must be a leaf holding [`positional_encoding`]`(L, d_m)`; it is
/// passed in (rather than recomputed) so callers can share the cached
/// constant across samples.
pub fn hybrid_embed(
    g: &mut GradGraph,
    x: NodeId,
    kernel: NodeId,
    tables: [NodeId; 4],
    pos: NodeId,
    idx: &[[usize; 4]],
) -> NodeId {
    let l = g.value(x).rows;
    let d_m = g.value(kernel).cols;
    assert_eq!(g.value(x).cols, 1, "embedding input must be L×1");
    assert_eq!(idx.len(), l, "calendar index count must match sequence length");
    assert_eq!(g.value(pos).rows, l, "positional encoding length mismatch");
    assert_eq!(g.value(pos).cols, d_m, "positional encoding width mismatch");
    let token = g.conv1d_circ(x, kernel);
    let with_pos = g.add(token, pos);
    let temporal = g.calendar_sum(tables, idx);
    g.add(with_pos, temporal)
}
