//! The monitored-relay tap: open a measurement window, feed it flow
//! observations, and collect the pseudonymized anonymity set.
//!
//! ```bash
//! cargo run -p introsect --example capture_window
//! ```

use introsect::directory::{Address, RelayId};
use introsect::observer::{pseudonymize, PseudonymKey, Tap};
use introsect::simcore::FlowObservation;
use introsect::time::SimTime;

fn main() {
    let key = PseudonymKey::from_run_seed(99);
    let mut tap = Tap::new(key);
    let monitored = RelayId::new("intro-point");

    tap.start_window(monitored.clone(), 4, 1, SimTime::ZERO).unwrap();

    // The deterministic successor observation plus some background chatter.
    let flows = [
        ("intro-point", "m1-host"),
        ("intro-point", "bg-host-17"),
        ("intro-point", "bg-host-82"),
        ("intro-point", "bg-host-17"), // repeated destination, one member
        ("elsewhere", "unrelated"),    // not the monitored relay, ignored
    ];
    for (i, (at_relay, dst)) in flows.iter().enumerate() {
        tap.deliver(&FlowObservation {
            at_relay: RelayId::new(*at_relay),
            src: Address::new("upstream"),
            dst: Address::new(*dst),
            at: SimTime::from_nanos(i as u64 * 1000),
        });
    }

    let set = tap.stop_window(SimTime::from_secs_f64(1.1)).unwrap();
    println!(
        "stage {} trial {} captured {} pseudonyms over {:?}:",
        set.stage,
        set.trial,
        set.len(),
        set.window
    );
    for member in &set.members {
        println!("  {member}");
    }

    // Only destinations were retained; the successor's pseudonym is present
    // and stable, and a different run key yields unlinkable tokens.
    let successor = pseudonymize(&Address::new("m1-host"), tap.key());
    println!("successor pseudonym present: {}", set.members.contains(&successor));
    let other_run = PseudonymKey::from_run_seed(100);
    println!(
        "same address under another run key: {}",
        pseudonymize(&Address::new("m1-host"), &other_run)
    );
    println!("serialized set: {}", serde_json::to_string(&set).unwrap());
}
