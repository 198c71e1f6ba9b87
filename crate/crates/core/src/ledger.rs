//! Time-slot bandwidth ledger.
//!
//! Each link's occupation timeline is cut into equal slots. Slot `k` (1-based)
//! covers the interval `((k-1)*dur, k*dur]`. A reservation holds one fraction of
//! link capacity on every link of its path over a contiguous slot range. The
//! residual of a cell is recomputed from the fractions currently held on it, so
//! releasing a reservation restores the cell bit-for-bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::LinkId;
use crate::workload::TaskId;

/// Tolerance used for all time and fraction comparisons.
pub const EPS: f64 = 1e-9;

pub type ReservationId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("insufficient residual bandwidth on {link} in slot TS{slot}: have {residual}, need {requested}")]
    InsufficientResidual {
        link: LinkId,
        slot: u64,
        residual: f64,
        requested: f64,
    },
    #[error("unknown reservation {0}")]
    UnknownReservation(ReservationId),
    #[error("zero effective bandwidth")]
    ZeroBandwidth,
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("slot duration must be positive, got {0}")]
    InvalidSlotDuration(f64),
}

/// Seconds needed to move `split_mb` megabytes over `link_rate` Mbps at the given share.
pub fn movement_time(split_mb: f64, link_rate: f64, fraction: f64) -> Result<f64, LedgerError> {
    if !(fraction > 0.0) || !(link_rate > 0.0) {
        return Err(LedgerError::ZeroBandwidth);
    }
    if split_mb == 0.0 {
        return Ok(0.0);
    }
    Ok(split_mb * 8.0 / (link_rate * fraction))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub id: ReservationId,
    pub task: TaskId,
    pub path: Vec<LinkId>,
    /// First covered slot (1-based). `last_slot < first_slot` marks an empty reservation.
    pub first_slot: u64,
    pub last_slot: u64,
    pub fraction: f64,
    pub start: f64,
    pub duration: f64,
}

impl Reservation {
    pub fn is_empty(&self) -> bool {
        self.last_slot < self.first_slot
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn slot_count(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            self.last_slot - self.first_slot + 1
        }
    }
}

/// A transfer placement found by a ledger query; not yet reserved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Window {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// One row of the occupancy dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub link_id: LinkId,
    pub slot_index: u64,
    pub residual: f64,
}

#[derive(Debug, Clone, Default)]
struct Cell {
    holds: Vec<(ReservationId, f64)>,
}

// Reservation ids are bookkeeping; two cells are equal when they hold the same shares.
impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.holds.iter().map(|h| h.1).eq(other.holds.iter().map(|h| h.1))
    }
}

impl Cell {
    fn reserved(&self) -> f64 {
        self.holds.iter().map(|(_, f)| f).sum()
    }

    fn residual(&self) -> f64 {
        let r = 1.0 - self.reserved();
        if r < EPS {
            0.0
        } else {
            r.min(1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlotLedger {
    slot_duration: f64,
    /// Per-link cells indexed by `slot - 1`; trailing empty cells are trimmed.
    cells: BTreeMap<LinkId, Vec<Cell>>,
    active: BTreeMap<ReservationId, Reservation>,
    next_id: ReservationId,
}

impl PartialEq for SlotLedger {
    fn eq(&self, other: &Self) -> bool {
        self.slot_duration == other.slot_duration
            && self.cells == other.cells
            && self.active.values().map(|r| (&r.path, r.first_slot, r.last_slot, r.fraction)).eq(
                other.active.values().map(|r| (&r.path, r.first_slot, r.last_slot, r.fraction)),
            )
    }
}

impl SlotLedger {
    pub fn new(slot_duration: f64) -> Result<Self, LedgerError> {
        if !(slot_duration > 0.0) || !slot_duration.is_finite() {
            return Err(LedgerError::InvalidSlotDuration(slot_duration));
        }
        Ok(SlotLedger {
            slot_duration,
            cells: BTreeMap::new(),
            active: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn slot_duration(&self) -> f64 {
        self.slot_duration
    }

    /// Slots touched by a transfer occupying `(start, end]`, or `None` when empty.
    pub fn slot_range(&self, start: f64, end: f64) -> Option<(u64, u64)> {
        if end - start <= EPS {
            return None;
        }
        let first = (start / self.slot_duration + EPS).floor().max(0.0) as u64 + 1;
        let last = (end / self.slot_duration - EPS).ceil().max(1.0) as u64;
        (last >= first).then_some((first, last))
    }

    /// Last slot index holding any reservation (0 when empty).
    pub fn horizon(&self) -> u64 {
        self.cells.values().map(|c| c.len() as u64).max().unwrap_or(0)
    }

    pub fn residual(&self, link: LinkId, slot: u64) -> f64 {
        self.cell(link, slot).map_or(1.0, Cell::residual)
    }

    /// Sum of fractions currently held on one link-slot.
    pub fn reserved(&self, link: LinkId, slot: u64) -> f64 {
        self.cell(link, slot).map_or(0.0, Cell::reserved)
    }

    /// Minimum residual over all links of `path` and all slots in `first..=last`.
    pub fn path_residual(&self, path: &[LinkId], first: u64, last: u64) -> f64 {
        let mut min = 1.0f64;
        for link in path {
            let Some(cells) = self.cells.get(link) else {
                continue;
            };
            let hi = last.min(cells.len() as u64);
            for slot in first.max(1)..=hi {
                min = min.min(cells[(slot - 1) as usize].residual());
            }
        }
        min
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.active.values()
    }

    pub fn reserve(
        &mut self,
        task: TaskId,
        path: &[LinkId],
        start: f64,
        duration: f64,
        fraction: f64,
    ) -> Result<Reservation, LedgerError> {
        if !(fraction > 0.0) || fraction > 1.0 + EPS {
            return Err(LedgerError::InvalidFraction(fraction));
        }
        let fraction = fraction.min(1.0);
        let id = self.next_id;
        let Some((first, last)) = self.slot_range(start, start + duration.max(0.0)) else {
            return Ok(Reservation {
                id,
                task,
                path: path.to_vec(),
                first_slot: 1,
                last_slot: 0,
                fraction,
                start,
                duration: duration.max(0.0),
            });
        };
        for &link in path {
            for slot in first..=last {
                let residual = self.residual(link, slot);
                if residual + EPS < fraction {
                    return Err(LedgerError::InsufficientResidual {
                        link,
                        slot,
                        residual,
                        requested: fraction,
                    });
                }
            }
        }
        self.next_id += 1;
        for &link in path {
            let cells = self.cells.entry(link).or_default();
            if cells.len() < last as usize {
                cells.resize_with(last as usize, Cell::default);
            }
            for slot in first..=last {
                cells[(slot - 1) as usize].holds.push((id, fraction));
            }
        }
        let reservation = Reservation {
            id,
            task,
            path: path.to_vec(),
            first_slot: first,
            last_slot: last,
            fraction,
            start,
            duration,
        };
        self.active.insert(id, reservation.clone());
        Ok(reservation)
    }

    pub fn release(&mut self, reservation: &Reservation) -> Result<(), LedgerError> {
        if reservation.is_empty() {
            return Ok(());
        }
        let held = self
            .active
            .remove(&reservation.id)
            .ok_or(LedgerError::UnknownReservation(reservation.id))?;
        for link in &held.path {
            let Some(cells) = self.cells.get_mut(link) else {
                continue;
            };
            for slot in held.first_slot..=held.last_slot {
                if let Some(cell) = cells.get_mut((slot - 1) as usize) {
                    cell.holds.retain(|(id, _)| *id != held.id);
                }
            }
            while cells.last().is_some_and(|c| c.holds.is_empty()) {
                cells.pop();
            }
            if cells.is_empty() {
                self.cells.remove(link);
            }
        }
        Ok(())
    }

    /// Placement of a transfer starting exactly at `start`.
    ///
    /// The transfer takes the path's minimum residual over the slots it covers.
    /// A smaller share stretches the transfer, which may cover more slots, so the
    /// share is re-evaluated until it is stable. `None` when the share hits zero.
    pub fn plan_at(&self, path: &[LinkId], start: f64, full_rate_duration: f64) -> Option<Window> {
        if full_rate_duration <= 0.0 {
            return Some(Window {
                start,
                end: start,
                fraction: 1.0,
            });
        }
        let mut fraction = 1.0f64;
        loop {
            let end = start + full_rate_duration / fraction;
            let residual = match self.slot_range(start, end) {
                Some((first, last)) => self.path_residual(path, first, last),
                None => 1.0,
            };
            if residual <= 0.0 {
                return None;
            }
            if residual >= fraction {
                return Some(Window {
                    start,
                    end,
                    fraction,
                });
            }
            fraction = residual;
        }
    }

    /// Earliest window starting at or after `not_before` that finishes by `deadline`.
    ///
    /// Candidate starts are `not_before` and every later slot boundary.
    pub fn earliest_window(
        &self,
        path: &[LinkId],
        full_rate_duration: f64,
        not_before: f64,
        deadline: f64,
    ) -> Option<Window> {
        let dur = self.slot_duration;
        let mut start = not_before.max(0.0);
        let mut boundary = (start / dur + EPS).floor() as u64 + 1;
        loop {
            if start > deadline + EPS {
                return None;
            }
            if let Some(w) = self.plan_at(path, start, full_rate_duration) {
                if w.end <= deadline + EPS {
                    return Some(w);
                }
                // Beyond the horizon every later start would only end later.
                if boundary > self.horizon() + 1 {
                    return None;
                }
            }
            start = boundary as f64 * dur;
            boundary += 1;
        }
    }

    /// Earliest window for moving `split_mb` over a path of rate `link_rate`.
    pub fn earliest_feasible_window(
        &self,
        path: &[LinkId],
        split_mb: f64,
        link_rate: f64,
        not_before: f64,
        deadline: f64,
    ) -> Result<Option<(f64, f64)>, LedgerError> {
        let full = movement_time(split_mb, link_rate, 1.0)?;
        Ok(self
            .earliest_window(path, full, not_before, deadline)
            .map(|w| (w.start, w.end)))
    }

    /// Every touched link-slot with its residual, sorted by link then slot.
    pub fn occupancy(&self) -> Vec<OccupancyRow> {
        let mut rows = Vec::new();
        for (link, cells) in &self.cells {
            for (i, cell) in cells.iter().enumerate() {
                rows.push(OccupancyRow {
                    link_id: *link,
                    slot_index: i as u64 + 1,
                    residual: cell.residual(),
                });
            }
        }
        rows
    }

    pub fn occupancy_csv(&self) -> Result<String, csv::Error> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["link_id", "slot_index", "residual"])?;
        for row in self.occupancy() {
            writer.write_record([
                row.link_id.0.to_string(),
                row.slot_index.to_string(),
                row.residual.to_string(),
            ])?;
        }
        let bytes = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn cell(&self, link: LinkId, slot: u64) -> Option<&Cell> {
        if slot == 0 {
            return None;
        }
        self.cells.get(&link)?.get((slot - 1) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const L1: LinkId = LinkId(1);
    const L2: LinkId = LinkId(2);

    fn ledger() -> SlotLedger {
        SlotLedger::new(1.0).unwrap()
    }

    #[test]
    fn movement_time_values() {
        assert!((movement_time(64.0, 100.0, 1.0).unwrap() - 5.12).abs() < 1e-9);
        assert_eq!(movement_time(0.0, 100.0, 0.3).unwrap(), 0.0);
        let brute = 64.0 * 8.0 / (100.0 * 0.5);
        assert!((movement_time(64.0, 100.0, 0.5).unwrap() - brute).abs() < 1e-9);
        assert!((brute - 10.24).abs() < 1e-9);
        assert_eq!(movement_time(64.0, 100.0, 0.0), Err(LedgerError::ZeroBandwidth));
    }

    #[test]
    fn fresh_ledger_is_fully_free() {
        let l = ledger();
        assert_eq!(l.path_residual(&[L1, L2], 1, 100), 1.0);
        assert_eq!(l.path_residual(&[], 1, 1), 1.0);
    }

    #[test]
    fn transfer_from_three_to_eight_covers_ts4_to_ts8() {
        let mut l = ledger();
        let r = l.reserve(TaskId(1), &[L2, L1], 3.0, 5.0, 1.0).unwrap();
        assert_eq!((r.first_slot, r.last_slot), (4, 8));
        assert_eq!(l.path_residual(&[L1, L2], 4, 8), 0.0);
        assert_eq!(l.residual(L1, 3), 1.0);
        assert_eq!(l.residual(L1, 9), 1.0);
        let err = l.reserve(TaskId(2), &[L1], 7.0, 2.0, 1.0).unwrap_err();
        assert!(matches!(err, LedgerError::InsufficientResidual { link: L1, slot: 8, .. }));
    }

    #[test]
    fn overlapping_partial_reservations() {
        let mut l = ledger();
        l.reserve(TaskId(1), &[L1], 0.0, 1.0, 0.4).unwrap();
        l.reserve(TaskId(2), &[L1], 0.0, 1.0, 0.3).unwrap();
        assert!((l.residual(L1, 1) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn zero_duration_leaves_ledger_untouched() {
        let mut l = ledger();
        let r = l.reserve(TaskId(1), &[L1], 2.0, 0.0, 1.0).unwrap();
        assert!(r.is_empty());
        assert_eq!(l, ledger());
        l.release(&r).unwrap();
    }

    #[test]
    fn release_restores_exactly_and_rejects_double_release() {
        let mut l = ledger();
        let r = l.reserve(TaskId(1), &[L1, L2], 0.5, 3.3, 0.7).unwrap();
        l.release(&r).unwrap();
        assert_eq!(l, ledger());
        assert_eq!(l.release(&r), Err(LedgerError::UnknownReservation(r.id)));
    }

    #[test]
    fn interleaved_release_matches_replay() {
        let mut l = ledger();
        let a = l.reserve(TaskId(1), &[L1], 0.0, 4.0, 0.4).unwrap();
        l.reserve(TaskId(2), &[L1, L2], 2.0, 4.0, 0.35).unwrap();
        l.release(&a).unwrap();

        let mut replay = ledger();
        replay.reserve(TaskId(2), &[L1, L2], 2.0, 4.0, 0.35).unwrap();
        assert_eq!(l, replay);
        assert_eq!(l.occupancy(), replay.occupancy());
    }

    #[test]
    fn earliest_window_examples() {
        let mut l = ledger();
        let w = l.earliest_window(&[L2, L1], 5.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!((w.start, w.end), (0.0, 5.0));
        assert_eq!(l.slot_range(w.start, w.end), Some((1, 5)));

        l.reserve(TaskId(9), &[L1], 0.0, 3.0, 1.0).unwrap();
        // Oracle: scan slot starts linearly, take the first whose five slots are free.
        let oracle = (0..20u64)
            .find(|&s| (s + 1..=s + 5).all(|k| l.residual(L1, k) == 1.0))
            .unwrap() as f64;
        let w = l.earliest_window(&[L2, L1], 5.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(w.start, oracle);
        assert_eq!(w.start, 3.0);
    }

    #[test]
    fn earliest_window_none_when_booked_through_deadline() {
        let mut l = ledger();
        l.reserve(TaskId(1), &[L1], 0.0, 50.0, 1.0).unwrap();
        assert_eq!(l.earliest_window(&[L1], 5.0, 0.0, 50.0), None);
        assert_eq!(
            l.earliest_feasible_window(&[L1], 64.0, 100.0, 0.0, 30.0).unwrap(),
            None
        );
        let w = l.earliest_window(&[L1], 5.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(w.start, 50.0);
    }

    #[test]
    fn plan_shrinks_share_to_path_minimum() {
        let mut l = ledger();
        l.reserve(TaskId(1), &[L1], 0.0, 20.0, 0.5).unwrap();
        let w = l.plan_at(&[L2, L1], 0.0, 5.0).unwrap();
        assert_eq!(w.fraction, 0.5);
        assert!((w.end - 10.0).abs() < 1e-9);
        // The planned share is grantable.
        l.reserve(TaskId(2), &[L2, L1], w.start, w.duration(), w.fraction).unwrap();
        assert_eq!(l.residual(L1, 5), 0.0);
    }

    #[test]
    fn occupancy_csv_columns() {
        let mut l = ledger();
        l.reserve(TaskId(1), &[L1], 0.0, 2.0, 0.25).unwrap();
        let csv = l.occupancy_csv().unwrap();
        assert_eq!(csv, "link_id,slot_index,residual\n1,1,0.75\n1,2,0.75\n");
    }
}
