use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seal_core::eval::eval;
use seal_core::oracle::brute_force_eval;
use seal_core::sexpr::{parse, print};
use seal_core::sparql::{execute_sparql, parse_sparql_subset, to_sparql};
use seal_core::testkit::random_case;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn eval_matches_oracle(seed in any::<u64>()) {
        let (e, g) = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        prop_assert_eq!(eval(&e, &g).unwrap(), brute_force_eval(&e, &g).unwrap(), "{}", e);
    }

    #[test]
    fn sparql_matches_eval(seed in any::<u64>()) {
        let (e, g) = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let q = to_sparql(&e).unwrap();
        prop_assert_eq!(execute_sparql(&q, &g).unwrap(), eval(&e, &g).unwrap(), "{}\n{}", e, q);
    }

    #[test]
    fn rendered_sparql_reparses(seed in any::<u64>()) {
        let (e, _) = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 10);
        let q = to_sparql(&e).unwrap();
        prop_assert_eq!(parse_sparql_subset(&q.render()).unwrap(), q);
    }

    #[test]
    fn print_parse_round_trip(seed in any::<u64>()) {
        let (e, _) = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 10);
        prop_assert_eq!(parse(&print(&e)).unwrap(), e);
    }
}
