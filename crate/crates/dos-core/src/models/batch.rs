//! Collating a scene's agents into batched tensors.

use crate::autodiff::Tensor;
use crate::data::{normalize_agent_at, NormalizedAgent, Scene};
use crate::geometry::Point2;

/// One scene's valid agents, batched per step. Row order follows the
/// scene's agent order (skipping agents with an invalid anchor), so
/// batches are deterministic.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Vec<NormalizedAgent>,
    /// Per history step: features `[B, 4]` and mask `[B]`.
    pub hist_feats: Vec<Tensor>,
    pub hist_mask: Vec<Tensor>,
    /// Per future step: truth x, truth y, and mask, each `[B]`.
    pub fut_x: Vec<Tensor>,
    pub fut_y: Vec<Tensor>,
    pub fut_mask: Vec<Tensor>,
    /// Agent-frame velocity at the anchor, per row.
    pub current_velocity: Vec<Point2>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn history_steps(&self) -> usize {
        self.hist_feats.len()
    }

    pub fn future_steps(&self) -> usize {
        self.fut_x.len()
    }

    pub fn collate(scene: &Scene, history_steps: usize, future_steps: usize) -> Option<Batch> {
        Batch::collate_at(scene, scene.anchor_index, history_steps, future_steps)
    }

    pub fn collate_at(
        scene: &Scene,
        anchor: usize,
        history_steps: usize,
        future_steps: usize,
    ) -> Option<Batch> {
        let rows: Vec<NormalizedAgent> = (0..scene.agents.len())
            .filter_map(|i| normalize_agent_at(scene, i, anchor, history_steps, future_steps))
            .filter(|n| n.history_mask.iter().any(|m| *m > 0.0))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let b = rows.len();

        let mut hist_feats = Vec::with_capacity(history_steps + 1);
        let mut hist_mask = Vec::with_capacity(history_steps + 1);
        for k in 0..=history_steps {
            let mut feats = Vec::with_capacity(b * 4);
            let mut mask = Vec::with_capacity(b);
            for row in &rows {
                feats.extend_from_slice(&row.history[k]);
                mask.push(row.history_mask[k]);
            }
            hist_feats.push(Tensor::matrix(b, 4, feats).unwrap());
            hist_mask.push(Tensor::vector(mask));
        }

        let mut fut_x = Vec::with_capacity(future_steps);
        let mut fut_y = Vec::with_capacity(future_steps);
        let mut fut_mask = Vec::with_capacity(future_steps);
        for k in 0..future_steps {
            fut_x.push(Tensor::vector(rows.iter().map(|r| r.future[k].x).collect()));
            fut_y.push(Tensor::vector(rows.iter().map(|r| r.future[k].y).collect()));
            fut_mask.push(Tensor::vector(rows.iter().map(|r| r.future_mask[k]).collect()));
        }

        let current_velocity = rows.iter().map(|r| r.current_velocity).collect();
        Some(Batch {
            rows,
            hist_feats,
            hist_mask,
            fut_x,
            fut_y,
            fut_mask,
            current_velocity,
        })
    }
}
