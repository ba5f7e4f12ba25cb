import os

experiment_run = "setting1_spatial"

out_dir = os.environ.get("ESA_OUT_DIR", "out")
run_dir = os.path.join(out_dir, experiment_run)

# worker threads for per-observation alignments and CV cells
num_threads = int(os.environ.get("ESA_NUM_THREADS", "1"))

# grid and DP lattice: the slope bound grows with the grid, from max_slope
# up to max_slope_cap, so that steps span about slope_span of [0, 1]
grid_size = 201
max_slope = 4
max_slope_cap = 8
slope_span = 0.02

seed = 1234

# multiple registration (template estimation)
multiple_tol = 1e-4
multiple_max_iter = 50

# spatially penalized registration
outer_tol = 1e-4
inner_tol = 1e-4
max_outer = 20
max_inner = 10
init_template = "aligned"
default_lambda = 1e-1

# phase variogram
variogram_cutoff = 0.75
kriging_tol = 1e-10
kriging_max_iter = 20000

# simulation
range_factor = 0.5

# cross validation
k_folds = 4
lambda_grid = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3]

# pre-smoothing of low-SNR data
presmooth_strength = 1e-5

# replicated method comparison
num_replicates = 10
replicate_lambda = 1e-1
