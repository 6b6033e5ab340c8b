//! Pins the key-length formula to a table computed independently with
//! 60-digit arithmetic. Every row must match to the exact integer: the
//! formula is a floor of a sum of logs, so any drift in the entropy or
//! penalty terms shows up here first.

use qkd_core::security::{secret_key_length, EpsilonBudget, SecurityBounds};

#[test]
fn the_frozen_fixture_table_matches_to_the_integer() {
    let table = include_str!("data/key_length_fixtures.csv");
    let mut lines = table.lines();
    let header = lines.next().expect("fixture table is empty");
    assert_eq!(
        header,
        "m0_lower,m1_lower,e_phase,e_bit,xi,eps_sec,eps_cor,expected_length"
    );

    let mut checked = 0u32;
    let mut zero_rows = 0u32;
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8, "row {row} malformed: {line}");
        let num = |i: usize| -> f64 { fields[i].parse().expect("bad float in fixtures") };

        let bounds = SecurityBounds {
            m0_lower: num(0),
            m1_lower: num(1),
            e_phase_upper: num(2),
            e_bit: num(3),
            n_z_sifted: (num(0) + num(1)).ceil() as u64 + 1,
        };
        let budget = EpsilonBudget::new(num(5), num(6));
        let expected: u64 = fields[7].parse().expect("bad length in fixtures");

        let got = secret_key_length(&bounds, &budget, num(4));
        assert_eq!(
            got, expected,
            "row {row}: length {got} != {expected} for {line}"
        );
        checked += 1;
        if expected == 0 {
            zero_rows += 1;
        }
    }
    assert_eq!(checked, 100);
    // the table deliberately includes rows that floor to nothing
    assert!(zero_rows > 0, "fixture table lost its zero-length rows");
}
