//! Template rendering of dialogue acts into plain sentences, for transcripts
//! and human-facing views.

use crate::domain::{DialogueAct, Speaker, DONT_CARE, NO_MATCH};
use crate::schema::{Intent, Slot};

/// Renders one act. Unknown combinations fall back to a key-value form.
pub fn render_act(act: &DialogueAct) -> String {
    if act.is_booking() {
        return render_booking(act);
    }
    let rendered = match (act.speaker, act.intent) {
        (Speaker::Agent, Intent::Request) if act.request_slots.len() == 1 => {
            act.request_slots.iter().next().and_then(|s| agent_question(*s))
        }
        (Speaker::Agent, Intent::Inform) if act.inform_slots.len() == 1 => {
            let (slot, value) = act.inform_slots.iter().next().expect("one slot");
            Some(agent_inform(*slot, value))
        }
        (Speaker::User, Intent::Inform) if !act.inform_slots.is_empty() && act.request_slots.is_empty() => {
            user_inform(act)
        }
        (Speaker::User, Intent::Request) if act.request_slots.len() == 1 && act.inform_slots.is_empty() => {
            act.request_slots.iter().next().and_then(|s| user_question(*s))
        }
        (Speaker::User, Intent::NotSure) if act.request_slots.is_empty() => {
            Some("I don't care, anything is fine.".to_string())
        }
        (Speaker::User, Intent::Deny) if act.inform_slots.len() == 1 => {
            let (slot, value) = act.inform_slots.iter().next().expect("one slot");
            Some(format!("No, I want {} {value}.", slot_noun(*slot)))
        }
        (_, Intent::Thanks) if is_plain(act) => Some("Thank you.".to_string()),
        (_, Intent::Greeting) if is_plain(act) => Some("Hello!".to_string()),
        (_, Intent::Welcome) if is_plain(act) => Some("You are welcome.".to_string()),
        (_, Intent::Closing) if is_plain(act) => Some("Bye.".to_string()),
        (Speaker::Agent, Intent::NotSure) if is_plain(act) => Some("I am not sure about that.".to_string()),
        (Speaker::Agent, Intent::ConfirmQuestion) if is_plain(act) => {
            Some("Could you confirm that?".to_string())
        }
        (Speaker::Agent, Intent::ConfirmAnswer) if is_plain(act) => Some("Yes, that is right.".to_string()),
        (Speaker::Agent, Intent::MultipleChoice) if is_plain(act) => {
            Some("There are several options, which one would you like?".to_string())
        }
        _ => None,
    };
    rendered.unwrap_or_else(|| key_value(act))
}

fn is_plain(act: &DialogueAct) -> bool {
    act.inform_slots.is_empty() && act.request_slots.is_empty()
}

fn agent_question(slot: Slot) -> Option<String> {
    let text = match slot {
        Slot::Theater => "Which theater would you like?",
        Slot::City => "Which city would you like?",
        Slot::Date => "What date would you like to watch it?",
        Slot::StartTime => "What time would you like to see it?",
        Slot::MovieName => "Which movie would you like to watch?",
        Slot::NumberOfPeople => "How many tickets do you need?",
        Slot::VideoFormat => "Which video format would you like?",
        Slot::Price => "What price range are you looking for?",
        _ => return None,
    };
    Some(text.to_string())
}

fn user_question(slot: Slot) -> Option<String> {
    let text = match slot {
        Slot::Ticket => "Could you help me to book the tickets?".to_string(),
        Slot::Theater => "Which theater is available?".to_string(),
        Slot::StartTime => "What times are available?".to_string(),
        Slot::Price => "How much are the tickets?".to_string(),
        other => format!("What is the {other}?"),
    };
    Some(text)
}

fn agent_inform(slot: Slot, value: &str) -> String {
    if value == NO_MATCH {
        return format!("Sorry, no {} is available.", slot_noun(slot).trim_start_matches("the "));
    }
    match slot {
        Slot::Price => format!("The tickets cost {value}."),
        _ => format!("{value} is available."),
    }
}

fn user_inform(act: &DialogueAct) -> Option<String> {
    let slots = &act.inform_slots;
    if slots.len() == 1 {
        let (slot, value) = slots.iter().next().expect("one slot");
        if value == DONT_CARE {
            return Some(format!("Any {} is fine.", slot_noun(*slot).trim_start_matches("the ")));
        }
        return Some(match slot {
            Slot::Date => format!("I want to set it up {value}."),
            Slot::NumberOfPeople => format!("I want {value} tickets please!"),
            Slot::City => format!("I want to watch at {value}."),
            Slot::Theater => format!("I want to go to {value}."),
            Slot::StartTime => format!("I want to watch it at {value}."),
            Slot::MovieName => format!("I want to watch {value}."),
            other => format!("I want {} {value}.", slot_noun(*other)),
        });
    }
    if slots.values().any(|v| v == DONT_CARE) {
        return None;
    }
    let mut sentence = String::from("I want to watch");
    if let Some(movie) = slots.get(&Slot::MovieName) {
        sentence.push(' ');
        sentence.push_str(movie);
    }
    for (slot, value) in slots {
        let fragment = match slot {
            Slot::MovieName => continue,
            Slot::StartTime | Slot::Theater => format!(" at {value}"),
            Slot::City => format!(" in {value}"),
            Slot::Date => format!(" {value}"),
            Slot::NumberOfPeople => format!(" with {value} tickets"),
            other => format!(" with {} {value}", slot_noun(*other)),
        };
        sentence.push_str(&fragment);
    }
    sentence.push('.');
    Some(sentence)
}

fn render_booking(act: &DialogueAct) -> String {
    let slots = &act.inform_slots;
    if slots.get(&Slot::TaskComplete).is_some_and(|v| v == NO_MATCH) {
        return "Sorry, I could not find any tickets matching your request.".to_string();
    }
    let mut sentence = String::from("Great - I was able to purchase");
    if let Some(n) = slots.get(&Slot::NumberOfPeople).or_else(|| slots.get(&Slot::Ticket)) {
        sentence.push_str(&format!(" {} tickets", number(n)));
    } else {
        sentence.push_str(" tickets");
    }
    sentence.push_str(" for you");
    if let Some(movie) = slots.get(&Slot::MovieName) {
        sentence.push_str(&format!(" to see {movie}"));
    }
    if let Some(date) = slots.get(&Slot::Date) {
        sentence.push_str(&format!(" {date}"));
    }
    if let Some(theater) = slots.get(&Slot::Theater) {
        sentence.push_str(&format!(" at {theater} theater"));
    }
    if let Some(city) = slots.get(&Slot::City) {
        sentence.push_str(&format!(" in {city}"));
    }
    if let Some(time) = slots.get(&Slot::StartTime) {
        sentence.push_str(&format!(" at {time}"));
    }
    sentence.push('.');
    sentence
}

fn number(word: &str) -> String {
    let digits = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    digits
        .iter()
        .position(|w| w.eq_ignore_ascii_case(word))
        .map_or_else(|| word.to_string(), |n| n.to_string())
}

fn slot_noun(slot: Slot) -> &'static str {
    match slot {
        Slot::MovieName => "the movie",
        Slot::StartTime => "the start time",
        Slot::NumberOfPeople => "the number of people",
        Slot::Theater => "the theater",
        Slot::City => "the city",
        Slot::Date => "the date",
        Slot::Price => "the price",
        Slot::VideoFormat => "the video format",
        _ => "the value",
    }
}

fn key_value(act: &DialogueAct) -> String {
    let mut parts: Vec<String> = act.inform_slots.iter().map(|(s, v)| format!("{s}={v}")).collect();
    parts.extend(act.request_slots.iter().map(|s| format!("{s}=?")));
    format!("{}({})", act.intent, parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_phrasings() {
        assert_eq!(
            render_act(&DialogueAct::request(Speaker::Agent, Slot::Theater)),
            "Which theater would you like?"
        );
        assert_eq!(
            render_act(&DialogueAct::inform(Speaker::User, [(Slot::Date, "tomorrow".into())])),
            "I want to set it up tomorrow."
        );
        let opening = DialogueAct::inform(
            Speaker::User,
            [(Slot::MovieName, "creed".into()), (Slot::StartTime, "around noon".into())],
        );
        assert_eq!(render_act(&opening), "I want to watch creed at around noon.");
        assert_eq!(
            render_act(&DialogueAct::inform(Speaker::Agent, [(Slot::Theater, "century eastport 16".into())])),
            "century eastport 16 is available."
        );
    }

    #[test]
    fn booking_confirmation() {
        let act = DialogueAct::inform(
            Speaker::Agent,
            [
                (Slot::TaskComplete, "booked".into()),
                (Slot::NumberOfPeople, "four".into()),
                (Slot::MovieName, "creed".into()),
                (Slot::Date, "tomorrow".into()),
                (Slot::Theater, "century eastport 16".into()),
                (Slot::City, "regency".into()),
                (Slot::StartTime, "around noon".into()),
            ],
        );
        assert_eq!(
            render_act(&act),
            "Great - I was able to purchase 4 tickets for you to see creed tomorrow \
             at century eastport 16 theater in regency at around noon."
        );
    }

    #[test]
    fn unknown_combinations_fall_back_to_key_values() {
        let act = DialogueAct::new(Speaker::User, Intent::ConfirmQuestion).with_request(Slot::Zip);
        assert_eq!(render_act(&act), "confirm_question(zip=?)");
    }

    #[test]
    fn rendering_is_pure() {
        let act = DialogueAct::request(Speaker::User, Slot::Ticket);
        assert_eq!(render_act(&act), render_act(&act.clone()));
    }
}
