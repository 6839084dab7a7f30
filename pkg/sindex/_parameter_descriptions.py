CONFIG_DESC = ("Experiment config (.toml or .json). Values given on the "
               "command line override the config; the first value of each "
               "grid axis is used outside `experiment`.")
SEED_DESC = "Integer seed; every random stream of the run derives from it."
OUT_DESC = "Output directory, created when missing."
FORMAT_DESC = "Format of tables written to stdout and to the output directory."
QUIET_DESC = "Suppress progress lines on stderr."
LINK_DESC = ("Teacher link: piecewise_linear (the default asymmetric "
             "profile), relu, or hermite_monomial of order --s.")
S_DESC = ("Information exponent. Hermite orders below s are removed from the "
          "link before normalization.")
ACTIVATION_DESC = "Feature activation: 'relu' or 'smoothed_relu(rho)'."
SCHEDULE_DESC = ("two_phase trains theta alone for --t0 steps before joint "
                 "training; vanilla trains both from the start.")
STATE_DESC = "Model state JSON written by `train`."
LAM_PRIME_DESC = "Ridge penalty of the fine-tuning refit of c."
M_GRID_DESC = "Number of points of the uniform m-grid on [-1, 1]."
LAMS_DESC = ("Penalties to test for monotonicity of the projected loss; "
             "repeat the option for several values.")
RELU_DESC = "Print the closed-form Hermite coefficients of the ReLU."
MAX_ORDER_DESC = "Largest Hermite order to print."
SUITE_DESC = "Acceptance suite to run."
THREADS_DESC = ("Worker threads for the sweep, capped by SINDEX_THREADS "
                "when set (defaults to SINDEX_THREADS or 1).")
PLOTS_DESC = "Also write SVG plots next to the tables."
