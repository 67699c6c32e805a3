import os

# Pin BLAS threading before numpy loads so every run is single-threaded and
# bit-reproducible regardless of the host's core count.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
