use lumenfit::report::{coef_cell, fmt3, regression_table, TableColumn};
use lumenfit_core::linear_models::{significance_stars, Term};
use proptest::prelude::*;

fn term() -> impl Strategy<Value = (f64, f64, f64)> {
    (-1e3f64..1e3, 1e-3f64..1e2, 0.0f64..1.0)
}

proptest! {
    // every text cell is the CSV value rounded to three decimals
    #[test]
    fn text_cells_are_rounded_csv_values(terms in prop::collection::vec(term(), 1..6), n in 10usize..10_000) {
        let col = TableColumn {
            label: "m".into(),
            terms: terms
                .iter()
                .enumerate()
                .map(|(j, &(est, se, p))| Term {
                    name: format!("v{j}"),
                    estimate: est,
                    std_error: se,
                    t_value: est / se,
                    p_value: p,
                })
                .collect(),
            n,
            r_squared: 0.5,
            adj_r_squared: 0.49,
            f: None,
        };
        let (text, csv) = regression_table("t", &[col]);
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        let mut seen = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            if !rec[1].starts_with('v') {
                continue;
            }
            let est: f64 = rec[2].parse().unwrap();
            let se: f64 = rec[3].parse().unwrap();
            let p: f64 = rec[5].parse().unwrap();
            let j: usize = rec[1][1..].parse().unwrap();
            prop_assert_eq!(est, terms[j].0);
            prop_assert_eq!(se, terms[j].1);
            prop_assert_eq!(&rec[6], significance_stars(p));
            let cell = format!("{}{}", fmt3(est), &rec[6]);
            prop_assert!(text.lines().any(|l| l.split_whitespace().any(|w| w == cell)), "{}", cell);
            let se_cell = format!("({})", fmt3(se));
            prop_assert!(text.contains(&se_cell));
            seen += 1;
        }
        prop_assert_eq!(seen, terms.len());
    }

    #[test]
    fn stars_follow_the_thresholds(p in 0.0f64..1.0) {
        let s = significance_stars(p);
        let want = if p < 0.01 { "***" } else if p < 0.05 { "**" } else if p < 0.1 { "*" } else { "" };
        prop_assert_eq!(s, want);
    }
}

#[test]
fn star_examples() {
    assert_eq!(significance_stars(0.04), "**");
    assert_eq!(significance_stars(0.08), "*");
    assert_eq!(significance_stars(0.004), "***");
    assert_eq!(coef_cell(5.358, 1.442, 0.004), "5.358*** (1.442)");
}
