//! Labels hand-written therapy timelines with the acuity rules.

use acuity::datamodel::{TherapyEvent, TherapyKind};
use acuity::phenotype::{label_window, HOUR};

fn show(name: &str, events: &[TherapyEvent], a: f64) {
    let w = label_window(events, a);
    let triggers: Vec<&str> = w.triggers.iter().map(|t| t.as_str()).collect();
    println!("{name:<40} {:<20} [{}]", w.label.as_str(), triggers.join(", "));
}

fn main() {
    let a = 48.0 * HOUR;
    let units = |n: usize, from: f64| -> Vec<TherapyEvent> {
        (0..n)
            .map(|i| TherapyEvent::new("P1", from + i as f64 * 0.5 * HOUR, TherapyKind::TransfusionUnit))
            .collect()
    };

    show("no therapy", &[], a);
    show("vasopressor 3h before", &[TherapyEvent::new("P1", a - 3.0 * HOUR, TherapyKind::Vasopressor)], a);
    show("vasopressor 5h before", &[TherapyEvent::new("P1", a - 5.0 * HOUR, TherapyKind::Vasopressor)], a);
    show("ventilation at the assessment", &[TherapyEvent::new("P1", a, TherapyKind::MechanicalVentilation)], a);
    show("9 transfusion units", &units(9, a - 6.0 * HOUR), a);
    show("10 transfusion units", &units(10, a - 6.0 * HOUR), a);
    show("10 units starting 25h before", &units(10, a - 25.0 * HOUR), a);

    let mut dead = units(12, a - 8.0 * HOUR);
    dead.push(TherapyEvent::new("P1", a - HOUR, TherapyKind::Death));
    show("12 units, then death", &dead, a);

    let mut sofa = vec![TherapyEvent::sofa("P1", a - 10.0 * HOUR, 6), TherapyEvent::sofa("P1", a - 2.0 * HOUR, 9)];
    sofa.push(TherapyEvent::new("P1", a - HOUR, TherapyKind::Crrt));
    let w = label_window(&sofa, a);
    println!("latest SOFA before the assessment: {:?}", w.sofa);
}
