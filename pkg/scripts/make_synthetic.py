"""Write a synthetic dataset in the prepared directory layout.

    python scripts/make_synthetic.py out/synth --students 500 --mode duplicated
"""

import argparse

from leakfree_kt.data import compute_stats, generate_synthetic, write_canonical


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output")
    ap.add_argument("--students", type=int, default=500)
    ap.add_argument("--questions", type=int, default=50)
    ap.add_argument("--kcs", type=int, default=10)
    ap.add_argument("--kcs-per-question", type=int, default=1)
    ap.add_argument("--per-student", type=int, default=50)
    ap.add_argument("--mode", choices=["independent", "duplicated"], default="independent")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    ds = generate_synthetic(a.students, a.questions, a.kcs, a.kcs_per_question, seed=a.seed,
                            correlation_mode=a.mode, questions_per_student=a.per_student)
    write_canonical(ds, a.output)
    print(compute_stats(ds.logs, ds.mapping).as_row())


if __name__ == "__main__":
    main()
