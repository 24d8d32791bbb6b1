# Kompakte IMLS-Flächenrekonstruktion
