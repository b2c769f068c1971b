//! Discrete time grid: 5-minute slots covering the 06:00–22:00 daily
//! observation window, concatenated day after day. Slot indices count
//! only in-window slots, so windowed features must never straddle a day
//! boundary.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Minutes in the daily observation window (06:00 to 22:00).
pub const DAY_WINDOW_MINUTES: usize = 16 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Slot length in minutes.
    pub slot_minutes: usize,
    /// Slots per day inside the observation window.
    pub slots_per_day: usize,
    /// Whole weeks in the training span.
    pub weeks_train: usize,
    /// Whole weeks in the test span.
    pub weeks_test: usize,
}

impl TimeGrid {
    pub fn new(slot_minutes: usize, weeks_train: usize, weeks_test: usize) -> Result<Self> {
        if slot_minutes == 0 || DAY_WINDOW_MINUTES % slot_minutes != 0 {
            return Err(Error::Config(format!(
                "slot length {slot_minutes} min must evenly divide the {DAY_WINDOW_MINUTES}-min daily window"
            )));
        }
        if weeks_train == 0 || weeks_test == 0 {
            return Err(Error::Config(
                "training and test spans must each cover at least one week".into(),
            ));
        }
        Ok(Self {
            slot_minutes,
            slots_per_day: DAY_WINDOW_MINUTES / slot_minutes,
            weeks_train,
            weeks_test,
        })
    }

    /// The default experiment grid: 5-minute slots, 8 training weeks,
    /// 2 test weeks.
    pub fn default_experiment() -> Self {
        Self::new(5, 8, 2).expect("default grid is valid")
    }

    /// Slots in one week.
    pub fn slots_per_week(&self) -> usize {
        7 * self.slots_per_day
    }

    /// Number of training slots (train range is `[0, s_train)`).
    pub fn s_train(&self) -> usize {
        self.weeks_train * self.slots_per_week()
    }

    /// Number of test slots (test range is `[s_train, s_train + s_test)`).
    pub fn s_test(&self) -> usize {
        self.weeks_test * self.slots_per_week()
    }

    pub fn total_slots(&self) -> usize {
        self.s_train() + self.s_test()
    }

    pub fn total_days(&self) -> usize {
        7 * (self.weeks_train + self.weeks_test)
    }

    pub fn contains(&self, slot: usize) -> bool {
        slot < self.total_slots()
    }

    pub fn is_train(&self, slot: usize) -> bool {
        slot < self.s_train()
    }

    pub fn is_test(&self, slot: usize) -> bool {
        slot >= self.s_train() && slot < self.total_slots()
    }

    pub fn day_of(&self, slot: usize) -> usize {
        slot / self.slots_per_day
    }

    pub fn slot_of_day(&self, slot: usize) -> usize {
        slot % self.slots_per_day
    }

    pub fn slot_of_week(&self, slot: usize) -> usize {
        slot % self.slots_per_week()
    }

    /// Whether two slots fall on the same calendar day.
    pub fn same_day(&self, a: usize, b: usize) -> bool {
        self.day_of(a) == self.day_of(b)
    }

    /// Wall-clock minutes after midnight at the start of a slot.
    pub fn minutes_after_midnight(&self, slot: usize) -> usize {
        6 * 60 + self.slot_of_day(slot) * self.slot_minutes
    }
}
