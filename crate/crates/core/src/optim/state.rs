use crate::linalg::{Matrix, PowerIterState};
use crate::rng::SeededRng;

/// Accumulated optimizer state for one weight matrix. Moments are allocated
/// lazily on the first step that needs them.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub rows: usize,
    pub cols: usize,
    pub t: u64,
    /// First moment, in the weight's own coordinates.
    pub m: Option<Matrix>,
    /// Elementwise second moment (Adam, AdaMuon).
    pub v: Option<Matrix>,
    /// Per-block preconditioner state (Shampoo, SOAP); a single block when unblocked.
    pub blocks: Vec<BlockState>,
    /// Spectral-normalisation power iteration over the update.
    pub pi: PowerIterState,
    /// Separate state for the grafting reference optimizer.
    pub reference: Option<Box<LayerState>>,
}

impl LayerState {
    /// `seed` fixes the random start vector of the power iteration.
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = SeededRng::derived(seed, 0x5eed_0001);
        Self {
            rows,
            cols,
            t: 0,
            m: None,
            v: None,
            blocks: Vec::new(),
            pi: PowerIterState::random(cols, &mut rng),
            reference: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockState {
    pub r0: usize,
    pub c0: usize,
    pub rows: usize,
    pub cols: usize,
    /// EMA of `G Gᵀ` (left factor).
    pub l: Option<Matrix>,
    /// EMA of `Gᵀ G` (right factor).
    pub r: Option<Matrix>,
    /// Cached left transform: inverse root (Shampoo) or eigenbasis (SOAP).
    pub p_l: Option<Matrix>,
    pub p_r: Option<Matrix>,
    /// SOAP second moment in the rotated basis.
    pub v: Option<Matrix>,
    /// Step at which `p_l`/`p_r` were last refreshed.
    pub refreshed_at: u64,
}

impl BlockState {
    pub fn new(r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self {
            r0,
            c0,
            rows,
            cols,
            l: None,
            r: None,
            p_l: None,
            p_r: None,
            v: None,
            refreshed_at: 0,
        }
    }
}
