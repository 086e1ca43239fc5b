# Pseudo-frame oracles module