# Checkpoints, config, errors, numerics
