//! Multi-link choice among swept states.

/// Per-link RSSI change measured at one candidate length.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub length_mm: u32,
    pub deltas_db: Vec<f64>,
}

impl Candidate {
    pub fn new(length_mm: u32, deltas_db: Vec<f64>) -> Self {
        Self { length_mm, deltas_db }
    }

    pub fn total(&self) -> f64 {
        self.deltas_db.iter().sum()
    }
}

/// Index of the accepted candidate, or `None` to leave the roll off.
///
/// A candidate is dropped if any link loses more than `margin_db`. Among
/// the rest, only those where some link gains more than `margin_db` count;
/// the largest summed delta wins and ties go to the shorter length.
pub fn selection_rule(candidates: &[Candidate], margin_db: f64) -> Option<usize> {
    select(candidates, margin_db, None)
}

/// [`selection_rule`] with a per-link loss budget.
///
/// `headroom_db[l]` is how far link `l` currently sits above its all-off
/// reading; a candidate that would push any link below that reference is
/// dropped too. This keeps the surface from ever doing net harm to a link
/// through a chain of individually tolerated small losses.
pub fn selection_rule_with_headroom(candidates: &[Candidate], margin_db: f64, headroom_db: &[f64]) -> Option<usize> {
    select(candidates, margin_db, Some(headroom_db))
}

fn select(candidates: &[Candidate], margin_db: f64, headroom_db: Option<&[f64]>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let harmful = c.deltas_db.iter().enumerate().any(|(l, &d)| {
            d < -margin_db || headroom_db.is_some_and(|h| d < -h.get(l).copied().unwrap_or(0.0).max(0.0))
        });
        if harmful || !c.deltas_db.iter().any(|&d| d > margin_db) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (tb, tc) = (candidates[b].total(), c.total());
                if tc > tb || (tc == tb && c.length_mm < candidates[b].length_mm) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Best candidate that harms no link, even if none gains past the margin.
/// Used when a group showed a gain that no single roll reproduces.
pub fn best_harmless(candidates: &[Candidate], margin_db: f64, headroom_db: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let harmful = c
            .deltas_db
            .iter()
            .enumerate()
            .any(|(l, &d)| d < -margin_db || d < -headroom_db.get(l).copied().unwrap_or(0.0).max(0.0));
        if harmful || c.total() <= 0.0 {
            continue;
        }
        best = match best {
            Some(b)
                if candidates[b].total() > c.total()
                    || (candidates[b].total() == c.total() && candidates[b].length_mm <= c.length_mm) =>
            {
                Some(b)
            }
            _ => Some(i),
        };
    }
    best
}
