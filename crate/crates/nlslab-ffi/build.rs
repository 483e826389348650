fn main(){}
// probe
