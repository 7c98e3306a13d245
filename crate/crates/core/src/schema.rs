//! The dialogue annotation schema: intents and slots.
//!
//! Declaration order is significant: it fixes the index each intent and slot
//! occupies in state encodings.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = crate::Error;

            fn from_str(s: &str) -> crate::Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(crate::Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

vocabulary! {
    /// Dialogue intents.
    Intent {
        Request => "request",
        Inform => "inform",
        Deny => "deny",
        ConfirmQuestion => "confirm_question",
        ConfirmAnswer => "confirm_answer",
        Greeting => "greeting",
        Closing => "closing",
        NotSure => "not_sure",
        MultipleChoice => "multiple_choice",
        Thanks => "thanks",
        Welcome => "welcome",
    }
}

vocabulary! {
    /// Dialogue slots.
    Slot {
        City => "city",
        Closing => "closing",
        Date => "date",
        DistanceConstraints => "distanceconstraints",
        Greeting => "greeting",
        MovieName => "moviename",
        NumberOfPeople => "numberofpeople",
        Price => "price",
        StartTime => "starttime",
        State => "state",
        TaskComplete => "taskcomplete",
        Theater => "theater",
        TheaterChain => "theater_chain",
        Ticket => "ticket",
        VideoFormat => "video_format",
        Zip => "zip",
    }
}

/// Slots that correspond to knowledge-base attributes and may appear as goal
/// constraints or in a user's inform acts.
pub const INFORMABLE_SLOTS: &[Slot] = &[
    Slot::City,
    Slot::Date,
    Slot::DistanceConstraints,
    Slot::MovieName,
    Slot::NumberOfPeople,
    Slot::Price,
    Slot::StartTime,
    Slot::Theater,
    Slot::TheaterChain,
    Slot::VideoFormat,
    Slot::Zip,
];

/// Slots a user may ask the agent about.
pub const REQUESTABLE_SLOTS: &[Slot] = &[
    Slot::Ticket,
    Slot::Theater,
    Slot::StartTime,
    Slot::Price,
];

/// Ordered intent and slot inventories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub intents: Vec<Intent>,
    pub slots: Vec<Slot>,
    pub informable_slots: Vec<Slot>,
    pub requestable_slots: Vec<Slot>,
}

impl SlotSchema {
    /// The movie-ticket booking schema (11 intents, 16 slots).
    pub fn movie_booking() -> Self {
        Self {
            intents: Intent::ALL.to_vec(),
            slots: Slot::ALL.to_vec(),
            informable_slots: INFORMABLE_SLOTS.to_vec(),
            requestable_slots: REQUESTABLE_SLOTS.to_vec(),
        }
    }

    pub fn intent_index(&self, intent: Intent) -> usize {
        self.intents
            .iter()
            .position(|&i| i == intent)
            .expect("intent missing from schema")
    }

    pub fn slot_index(&self, slot: Slot) -> usize {
        self.slots
            .iter()
            .position(|&s| s == slot)
            .expect("slot missing from schema")
    }

    pub fn is_informable(&self, slot: Slot) -> bool {
        self.informable_slots.contains(&slot)
    }

    pub fn is_requestable(&self, slot: Slot) -> bool {
        self.requestable_slots.contains(&slot)
    }
}

impl Default for SlotSchema {
    fn default() -> Self {
        Self::movie_booking()
    }
}
