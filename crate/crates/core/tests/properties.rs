use dahash::diffcore::{softmax_rows, Array, Graph, Var};
use dahash::hashindex::{binarize, hamming, HashCode, RetrievalIndex};
use dahash::losses::{self, SimilarityMatrix};
use dahash::pseudo::{batch_centroids, pseudo_label};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |d| Array::matrix(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..8, 1usize..6)
}

fn code(bits: usize) -> impl Strategy<Value = HashCode> {
    prop::collection::vec(any::<bool>(), bits).prop_map(|b| HashCode::from_bits(&b))
}

fn permute(a: &Array, perm: &[usize]) -> Array {
    a.select_rows(perm)
}

fn eval(f: impl FnOnce(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.scalar(v)
}

fn probs(rows: usize, classes: usize) -> impl Strategy<Value = Array> {
    matrix(rows, classes, -6.0, 6.0).prop_map(|l| softmax_rows(&l))
}

/// Random labelled batch: embeddings in (-1, 1), labels, and a permutation.
fn labelled_batch() -> impl Strategy<Value = (Array, Vec<usize>, Vec<usize>, usize)> {
    (2usize..9, 1usize..5, 2usize..4).prop_flat_map(|(n, d, classes)| {
        (
            matrix(n, d, -0.99, 0.99),
            prop::collection::vec(0..classes, n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            Just(classes),
        )
    })
}

fn pseudo_batch(n: usize, classes: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-1i64..classes as i64, n)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(a in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c, -800.0, 800.0))) {
        let p = softmax_rows(&a);
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn ops_stay_finite((r, c) in dims(), seed in any::<u64>()) {
        let mut rng = seed;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 11) as f64 / (1u64 << 53) as f64) * 40.0 - 20.0
        };
        let a = Array::matrix(r, c, (0..r * c).map(|_| next()).collect()).unwrap();
        let w = Array::matrix(c, 3, (0..c * 3).map(|_| next()).collect()).unwrap();
        let mut g = Graph::new();
        let x = g.param(a);
        let wv = g.param(w);
        let h = g.matmul(x, wv).unwrap();
        let t = g.tanh(h);
        let l = g.leaky_relu(h, 0.2);
        let s = g.softmax_rows(l);
        let lg = g.log(s);
        let q = g.square(t);
        let ab = g.abs(lg);
        let s1 = g.sum(q);
        let s2 = g.sum(ab);
        let root = g.add(s1, s2).unwrap();
        prop_assert!(g.scalar(root).is_finite());
        let grads = g.backward(root).unwrap();
        prop_assert!(grads.get(x).is_finite() && grads.get(wv).is_finite());
    }

    #[test]
    fn hamming_is_a_metric((a, b, c) in (1usize..130).prop_flat_map(|n| (code(n), code(n), code(n)))) {
        let bits = a.bits();
        let ab = hamming(&a, &b).unwrap();
        prop_assert_eq!(ab, hamming(&b, &a).unwrap());
        prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        prop_assert!(ab as usize <= bits);
    }

    #[test]
    fn pack_unpack_round_trip(bits in prop::collection::vec(any::<bool>(), 1..200)) {
        let c = HashCode::from_bits(&bits);
        prop_assert_eq!(c.to_bits(), bits.clone());
        let again = HashCode::from_words(c.words().to_vec(), c.bits()).unwrap();
        prop_assert_eq!(again, c);
    }

    #[test]
    fn binarize_follows_sign(u in (1usize..5, 1usize..70).prop_flat_map(|(r, c)| matrix(r, c, -1.0, 1.0))) {
        let codes = binarize(&u);
        for (i, c) in codes.iter().enumerate() {
            for (j, &v) in u.row(i).iter().enumerate() {
                prop_assert_eq!(c.bit(j), v >= 0.0);
            }
        }
    }

    #[test]
    fn knn_distances_non_decreasing(
        codes in prop::collection::vec(code(24), 1..40),
        q in code(24),
        k in 1usize..50,
    ) {
        let labels = vec![0; codes.len()];
        let idx = RetrievalIndex::from_codes(&codes, &labels).unwrap();
        let hits = idx.knn(&q, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(codes.len()));
        for w in hits.windows(2) {
            prop_assert!((w[0].distance, w[0].id) < (w[1].distance, w[1].id));
        }
    }

    #[test]
    fn pseudo_labels_shrink_as_threshold_rises(p in (1usize..10, 2usize..5).prop_flat_map(|(r, c)| probs(r, c)), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = pseudo_label(&p, lo);
        let b = pseudo_label(&p, hi);
        for (x, y) in a.labels.iter().zip(&b.labels) {
            prop_assert!(*y == -1 || x == y);
        }
        prop_assert!(b.confident_fraction() <= a.confident_fraction());
    }

    #[test]
    fn pseudo_labels_idempotent_and_equivariant(
        (p, perm) in (1usize..10, 2usize..5).prop_flat_map(|(r, c)| (probs(r, c), Just((0..r).collect::<Vec<_>>()).prop_shuffle())),
        t in 0.0f64..0.99,
    ) {
        let pl = pseudo_label(&p, t);
        prop_assert_eq!(&pseudo_label(&p, t), &pl);
        // Relabelling one-hot rows of the confident labels reproduces them.
        let classes = p.cols();
        let mut hot = vec![1.0 / classes as f64; p.rows() * classes];
        for (i, &l) in pl.labels.iter().enumerate() {
            if l >= 0 {
                hot[i * classes..(i + 1) * classes].iter_mut().for_each(|v| *v = 0.0);
                hot[i * classes + l as usize] = 1.0;
            }
        }
        let again = pseudo_label(&Array::matrix(p.rows(), classes, hot).unwrap(), t.max(1.0 / classes as f64));
        prop_assert_eq!(&again.labels, &pl.labels);
        let permuted = pseudo_label(&permute(&p, &perm), t);
        for (new_i, &old_i) in perm.iter().enumerate() {
            prop_assert_eq!(permuted.labels[new_i], pl.labels[old_i]);
        }
    }

    #[test]
    fn centroids_of_duplicated_batch_match((u, labels, _, classes) in labelled_batch()) {
        let l: Vec<i64> = labels.iter().map(|&v| v as i64).collect();
        let once = batch_centroids(&u, &l, classes);
        let rows: Vec<usize> = (0..u.rows()).chain(0..u.rows()).collect();
        let twice = batch_centroids(&u.select_rows(&rows), &[l.clone(), l].concat(), classes);
        for c in 0..classes {
            prop_assert_eq!(twice.count(c), 2 * once.count(c));
            match (once.mean(c), twice.mean(c)) {
                (Some(a), Some(b)) => prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)),
                (None, None) => {}
                _ => prop_assert!(false, "presence differs for class {c}"),
            }
        }
    }

    #[test]
    fn similarity_matrix_symmetric_unit_diagonal(labels in prop::collection::vec(0usize..4, 1..12)) {
        let s = SimilarityMatrix::from_labels(&labels);
        let a = s.as_array();
        for i in 0..labels.len() {
            prop_assert_eq!(a.get(i, i), 1.0);
            for j in 0..labels.len() {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
                prop_assert_eq!(a.get(i, j), if labels[i] == labels[j] { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn hash_loss_nonnegative_and_permutation_invariant((u, labels, perm, _) in labelled_batch(), upsilon in 0.0f64..0.5) {
        let base = eval(|g| {
            let v = g.constant(u.clone());
            losses::hash_pair_loss(g, v, &SimilarityMatrix::from_labels(&labels), upsilon).unwrap()
        });
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let moved = eval(|g| {
            let v = g.constant(permute(&u, &perm));
            losses::hash_pair_loss(g, v, &SimilarityMatrix::from_labels(&pl), upsilon).unwrap()
        });
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn centroid_loss_invariant_to_row_order(
        (us, ys, perm, classes) in labelled_batch(),
        tseed in any::<u64>(),
    ) {
        // Target batch: the source embeddings shifted, with pseudo-labels.
        let ut = us.map(|v| (v * 0.7 + 0.1).clamp(-0.99, 0.99));
        let yt: Vec<i64> = ys.iter().enumerate().map(|(i, &l)| if (tseed >> (i % 64)) & 1 == 1 { -1 } else { l as i64 }).collect();
        let f = |us: Array, ys: &[usize], ut: Array, yt: &[i64]| {
            eval(|g| {
                let a = g.constant(us);
                let b = g.constant(ut);
                losses::centroid_loss(g, a, ys, b, yt, classes).unwrap()
            })
        };
        let base = f(us.clone(), &ys, ut.clone(), &yt);
        let ys_p: Vec<usize> = perm.iter().map(|&i| ys[i]).collect();
        let yt_p: Vec<i64> = perm.iter().map(|&i| yt[i]).collect();
        let moved = f(permute(&us, &perm), &ys_p, permute(&ut, &perm), &yt_p);
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn unassigned_rows_contribute_nothing(
        (ps, pt, ds, dt, df, us, ut, ys, yt, classes) in (2usize..8, 2usize..4).prop_flat_map(|(n, classes)| (
            probs(n, classes), probs(n, classes),
            probs(n, classes + 1), probs(n, classes + 1), probs(n, classes + 1),
            matrix(n, 3, -0.9, 0.9), matrix(n, 3, -0.9, 0.9),
            prop::collection::vec(0..classes, n), pseudo_batch(n, classes), Just(classes),
        )),
    ) {
        let n = ys.len();
        let keep: Vec<usize> = (0..n).filter(|&i| yt[i] != -1).collect();
        let yt_kept: Vec<i64> = keep.iter().map(|&i| yt[i]).collect();
        let with = |pt: Array, dt: Array, ut: Array, df: Array, yt: &[i64]| -> [f64; 4] {
            let mut g = Graph::new();
            let (psv, ptv) = (g.constant(ps.clone()), g.constant(pt));
            let (dsv, dtv, dfv) = (g.constant(ds.clone()), g.constant(dt), g.constant(df));
            let (usv, utv) = (g.constant(us.clone()), g.constant(ut));
            let c = losses::classification_loss(&mut g, psv, &ys, ptv, yt, 0.3).unwrap();
            let s = losses::centroid_loss(&mut g, usv, &ys, utv, yt, classes).unwrap();
            let d = losses::adversarial_d_loss(&mut g, dtv, yt, dsv, classes).unwrap();
            let a = losses::adversarial_g_loss(&mut g, dsv, &ys, dfv, yt, classes).unwrap();
            [g.scalar(c), g.scalar(s), g.scalar(d), g.scalar(a)]
        };
        let full = with(pt.clone(), dt.clone(), ut.clone(), df.clone(), &yt);
        let kept = with(pt.select_rows(&keep), dt.select_rows(&keep), ut.select_rows(&keep), df.select_rows(&keep), &yt_kept);
        for (a, b) in full.iter().zip(&kept) {
            prop_assert!(*a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn recon_loss_nonnegative_and_sums_duplicates(
        (x, y, xt, yt) in dims().prop_flat_map(|(r, c)| (
            matrix(r, c, -3.0, 3.0), matrix(r, c, -3.0, 3.0), matrix(r, c, -3.0, 3.0), matrix(r, c, -3.0, 3.0),
        )),
    ) {
        let r = x.rows();
        let f = |x: Array, y: Array| eval(|g| {
            let (a, b) = (g.constant(x), g.constant(y));
            let (c, d) = (g.constant(xt.clone()), g.constant(yt.clone()));
            losses::recon_l1_loss(g, a, b, c, d).unwrap()
        });
        let base = f(x.clone(), y.clone());
        prop_assert!(base >= 0.0);
        let dup: Vec<usize> = (0..r).chain(0..r).collect();
        let one_domain = base - f(x.select_rows(&[]), y.select_rows(&[]));
        let doubled = f(x.select_rows(&dup), y.select_rows(&dup)) - f(x.select_rows(&[]), y.select_rows(&[]));
        prop_assert!((doubled - 2.0 * one_domain).abs() <= 1e-9 * doubled.max(1.0));
    }
}
