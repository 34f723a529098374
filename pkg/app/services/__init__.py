# Captioning, picking, training and harness services
