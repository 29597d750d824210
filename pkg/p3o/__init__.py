# P3O: interleaved on-policy and off-policy policy optimization
