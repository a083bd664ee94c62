import os

# Pin BLAS pools before numpy's first import so benchmark timings in the
# acceptance suite are single-threaded.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
