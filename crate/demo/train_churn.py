import pandas as pd
from sklearn.linear_model import LogisticRegression


# mlops: train-model dataset=churn.csv target=churned model=logreg seed=7
def train_model(path="churn.csv"):
    df = pd.read_csv(path)
    X = pd.get_dummies(df.drop(columns=["churned"]))
    y = df["churned"] == "yes"
    return LogisticRegression(max_iter=500).fit(X, y)

