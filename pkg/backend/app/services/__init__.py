# Numerical services: geometry, rendering, distillation, training and analysis
