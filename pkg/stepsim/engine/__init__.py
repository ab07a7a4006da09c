# Numerical engine
